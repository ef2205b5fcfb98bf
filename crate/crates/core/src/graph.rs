//! Data–code assumption graph: column nodes on one side, natural-language
//! assumptions on the other, edges labelled with the code spans that gave
//! rise to the assumption.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dsl::DataUnitTest;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodeSpan {
    pub file: String,
    pub start_line: usize,
    pub end_line: usize,
}

impl CodeSpan {
    pub fn new(file: impl Into<String>, start_line: usize, end_line: usize) -> Result<Self> {
        if start_line == 0 || start_line > end_line {
            return Err(Error::Bounds(format!(
                "invalid span {start_line}..={end_line} (1-based, start <= end)"
            )));
        }
        Ok(Self {
            file: file.into(),
            start_line,
            end_line,
        })
    }

    pub fn lines(&self) -> std::ops::RangeInclusive<usize> {
        self.start_line..=self.end_line
    }
}

impl fmt::Display for CodeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}-{}", self.file, self.start_line, self.end_line)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionKind {
    SingleColumn,
    MultiColumn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assumption {
    pub id: String,
    pub text: String,
    pub kind: AssumptionKind,
}

impl Assumption {
    pub fn new(id: impl Into<String>, text: impl Into<String>, kind: AssumptionKind) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            kind,
        }
    }
}

/// A single column or a jointly accessed column set, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnNode(Vec<String>);

impl ColumnNode {
    pub fn single(name: impl Into<String>) -> Self {
        ColumnNode(vec![name.into()])
    }

    pub fn set<S: AsRef<str>>(names: &[S]) -> Self {
        let sorted: BTreeSet<String> = names.iter().map(|s| s.as_ref().to_owned()).collect();
        ColumnNode(sorted.into_iter().collect())
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn is_set(&self) -> bool {
        self.0.len() > 1
    }

    pub fn contains(&self, column: &str) -> bool {
        self.0.iter().any(|c| c == column)
    }
}

impl fmt::Display for ColumnNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("+"))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    One(String),
    Many(Vec<String>),
}

impl Serialize for ColumnNode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0.as_slice() {
            [one] => NodeRepr::One(one.clone()).serialize(s),
            many => NodeRepr::Many(many.to_vec()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ColumnNode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match NodeRepr::deserialize(d)? {
            NodeRepr::One(name) => ColumnNode::single(name),
            NodeRepr::Many(names) => ColumnNode::set(&names),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub column: ColumnNode,
    pub assumption_id: String,
    pub spans: Vec<CodeSpan>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionGraph {
    columns: BTreeSet<ColumnNode>,
    assumptions: Vec<Assumption>,
    edges: Vec<Edge>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Backtrace {
    pub assumptions: Vec<Assumption>,
    pub spans: Vec<CodeSpan>,
}

impl AssumptionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_column(&mut self, node: ColumnNode) {
        self.columns.insert(node);
    }

    pub fn columns(&self) -> impl Iterator<Item = &ColumnNode> {
        self.columns.iter()
    }

    pub fn assumptions(&self) -> &[Assumption] {
        &self.assumptions
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn assumption(&self, id: &str) -> Option<&Assumption> {
        self.assumptions.iter().find(|a| a.id == id)
    }

    /// Connect a registered column node to an assumption. Linking the same
    /// triple twice leaves the graph unchanged; new spans on an existing edge
    /// are merged in.
    pub fn link(&mut self, column: &ColumnNode, assumption: Assumption, spans: &[CodeSpan]) -> Result<()> {
        if !self.columns.contains(column) {
            return Err(Error::Graph(format!("unknown column node {column}")));
        }
        if assumption.text.trim().is_empty() {
            return Err(Error::Graph(format!("assumption {} has empty text", assumption.id)));
        }
        match self.assumption(&assumption.id) {
            Some(existing) if existing.text != assumption.text => {
                return Err(Error::Graph(format!(
                    "assumption id {} already used for different text",
                    assumption.id
                )))
            }
            Some(_) => {}
            None => self.assumptions.push(assumption.clone()),
        }
        let edge = match self
            .edges
            .iter_mut()
            .find(|e| &e.column == column && e.assumption_id == assumption.id)
        {
            Some(e) => e,
            None => {
                self.edges.push(Edge {
                    column: column.clone(),
                    assumption_id: assumption.id.clone(),
                    spans: Vec::new(),
                });
                self.edges.last_mut().expect("just pushed")
            }
        };
        let merged: BTreeSet<CodeSpan> = edge.spans.iter().chain(spans).cloned().collect();
        edge.spans = merged.into_iter().collect();
        Ok(())
    }

    /// Assumptions reachable from a column, including via column sets.
    pub fn assumptions_for(&self, column: &str) -> Vec<&Assumption> {
        let ids: BTreeSet<&str> = self
            .edges
            .iter()
            .filter(|e| e.column.contains(column))
            .map(|e| e.assumption_id.as_str())
            .collect();
        self.assumptions
            .iter()
            .filter(|a| ids.contains(a.id.as_str()))
            .collect()
    }

    pub fn spans_of(&self, assumption_id: &str) -> Vec<CodeSpan> {
        let set: BTreeSet<&CodeSpan> = self
            .edges
            .iter()
            .filter(|e| e.assumption_id == assumption_id)
            .flat_map(|e| &e.spans)
            .collect();
        set.into_iter().cloned().collect()
    }

    /// Assumptions behind a constraint and every code span linked to them.
    pub fn backtrace(&self, test: &DataUnitTest, constraint_id: &str) -> Result<Backtrace> {
        let c = test
            .constraint(constraint_id)
            .ok_or_else(|| Error::Graph(format!("unknown constraint id {constraint_id:?}")))?;
        let mut out = Backtrace::default();
        let mut spans = BTreeSet::new();
        for id in &c.assumption_ids {
            if let Some(a) = self.assumption(id) {
                if !out.assumptions.contains(a) {
                    out.assumptions.push(a.clone());
                }
                spans.extend(self.spans_of(id));
            }
        }
        out.spans = spans.into_iter().collect();
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        for e in &self.edges {
            if !self.columns.contains(&e.column) {
                return Err(Error::Graph(format!("edge from unregistered column {}", e.column)));
            }
            if self.assumption(&e.assumption_id).is_none() {
                return Err(Error::Graph(format!("edge to unknown assumption {}", e.assumption_id)));
            }
        }
        for a in &self.assumptions {
            if !self.edges.iter().any(|e| e.assumption_id == a.id) {
                return Err(Error::Graph(format!("assumption {} has no edge", a.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: AssumptionGraph = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    /// Writes `<dir>/<task_id>.json`.
    pub fn save(&self, dir: impl AsRef<Path>, task_id: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{task_id}.json"));
        fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

const MARKER_OPEN: &str = " # TASKCHECK_COL[";

fn split_terminator(line: &str) -> (&str, &str) {
    let body = line.strip_suffix('\n').unwrap_or(line);
    let body = body.strip_suffix('\r').unwrap_or(body);
    line.split_at(body.len())
}

fn marker_start(body: &str) -> Option<usize> {
    let at = body.rfind(MARKER_OPEN)?;
    let inner = body[at + MARKER_OPEN.len()..].strip_suffix(']')?;
    (!inner.contains(']')).then_some(at)
}

/// Append `# TASKCHECK_COL[a,b]` to every line a column's spans cover.
/// Names on a line are sorted; a line's terminator is preserved.
pub fn annotate_code(source: &str, spans: &BTreeMap<String, Vec<CodeSpan>>) -> Result<String> {
    let lines: Vec<&str> = source.split_inclusive('\n').collect();
    let mut per_line: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); lines.len()];
    for (column, list) in spans {
        if column.is_empty() || column.contains([',', ']', '\n']) {
            return Err(Error::Graph(format!("column {column:?} cannot be used in a marker")));
        }
        for span in list {
            if span.start_line == 0 || span.start_line > span.end_line || span.end_line > lines.len() {
                return Err(Error::Bounds(format!(
                    "span {span} outside 1..={} for column {column:?}",
                    lines.len()
                )));
            }
            for l in span.lines() {
                per_line[l - 1].insert(column);
            }
        }
    }
    let mut out = String::with_capacity(source.len());
    for (i, line) in lines.iter().enumerate() {
        let (body, term) = split_terminator(line);
        if marker_start(body).is_some() {
            return Err(Error::Graph(format!("line {} already carries a column marker", i + 1)));
        }
        out.push_str(body);
        if !per_line[i].is_empty() {
            out.push_str(MARKER_OPEN);
            out.push_str(&per_line[i].iter().copied().collect::<Vec<_>>().join(","));
            out.push(']');
        }
        out.push_str(term);
    }
    Ok(out)
}

/// Remove the markers added by [`annotate_code`].
pub fn strip_annotations(annotated: &str) -> String {
    let mut out = String::with_capacity(annotated.len());
    for line in annotated.split_inclusive('\n') {
        let (body, term) = split_terminator(line);
        match marker_start(body) {
            Some(at) => out.push_str(&body[..at]),
            None => out.push_str(body),
        }
        out.push_str(term);
    }
    out
}

/// Columns named by each line's marker, keyed by 1-based line number.
pub fn annotated_columns(annotated: &str) -> BTreeMap<usize, Vec<String>> {
    let mut out = BTreeMap::new();
    for (i, line) in annotated.split_inclusive('\n').enumerate() {
        let (body, _) = split_terminator(line);
        if let Some(at) = marker_start(body) {
            let inner = &body[at + MARKER_OPEN.len()..body.len() - 1];
            out.insert(i + 1, inner.split(',').map(str::to_owned).collect());
        }
    }
    out
}
