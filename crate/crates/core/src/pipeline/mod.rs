//! Task-aware test generation: discover accessed columns, trace their
//! dataflow, summarize assumptions into a graph, turn assumptions into
//! constraints and keep those that pass on the sample.

mod backend;
mod prompts;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

#[cfg(feature = "http")]
pub use backend::HttpBackend;
pub use backend::{Backend, CachedBackend, Decoding, MockBackend, ModelRequest, ModelResponse, Transcript, Usage};
pub use prompts::{allowed_placeholders, placeholders, PromptSet, TEMPLATES};

use crate::dsl::{
    parse_constraint, precheck_constraint, Constraint, DataUnitTest, Literal, Precheck, Predicate, Verb, GRAMMAR,
};
use crate::error::{Error, Result};
use crate::graph::{annotate_code, Assumption, AssumptionGraph, AssumptionKind, CodeSpan, ColumnNode};
use crate::par::fan_out;
use crate::profiler::{ColumnProfile, ProfileArtifact};
use crate::tabular::{parse_value, Dataset, Value, ValueKind};

/// Appended to a prompt when the previous reply was unusable.
pub const REPAIR_MARKER: &str = "Your previous reply could not be used";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: String,
    pub decoding: Decoding,
    /// Concurrent per-column requests.
    pub parallelism: usize,
    /// Re-asks after a malformed reply.
    pub max_repairs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: "mock".into(),
            decoding: Decoding::default(),
            parallelism: 4,
            max_repairs: 2,
        }
    }
}

/// Inputs shared by every step for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationContext {
    pub task_id: String,
    /// File name recorded in code spans.
    pub file: String,
    /// Task source with assertion blocks removed.
    pub source: String,
    pub profile: ProfileArtifact,
}

impl GenerationContext {
    pub fn new(task_id: &str, file: &str, source: &str, profile: ProfileArtifact) -> Self {
        Self {
            task_id: task_id.to_owned(),
            file: file.to_owned(),
            source: source.to_owned(),
            profile,
        }
    }

    pub fn schema(&self) -> Vec<String> {
        self.profile.columns.iter().map(|c| c.name.clone()).collect()
    }

    fn line_count(&self) -> usize {
        self.source.lines().count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    /// Distinct parsed constraints before precheck.
    pub generated: usize,
    pub discarded: usize,
    pub non_executable: usize,
    pub discard_reasons: BTreeMap<String, usize>,
    /// Column nodes dropped after a generation error.
    pub failed_nodes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub test: DataUnitTest,
    pub graph: AssumptionGraph,
    pub stats: Stats,
}

/// Constraints produced for one node, plus texts that did not parse.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeConstraints {
    pub constraints: Vec<Constraint>,
    pub non_executable: Vec<String>,
}

fn backticked(cols: &[String]) -> String {
    cols.iter().map(|c| format!("`{c}`")).collect::<Vec<_>>().join(", ")
}

pub fn numbered(source: &str) -> String {
    source
        .lines()
        .enumerate()
        .map(|(i, l)| format!("{:>4} | {l}\n", i + 1))
        .collect()
}

fn num(x: f64) -> String {
    let r = (x * 1e4).round() / 1e4;
    format!("{r}")
}

pub fn render_column_profile(c: &ColumnProfile) -> String {
    let mut s = format!(
        "- {} ({}): completeness {}, about {} distinct",
        c.name,
        c.inferred_type,
        num(c.completeness),
        c.approx_distinct
    );
    if let (Some(mean), Some(sd), Some(min), Some(max)) = (c.mean, c.stddev, c.min, c.max) {
        s += &format!(
            ", mean {}, stddev {}, min {}, max {}",
            num(mean),
            num(sd),
            num(min),
            num(max)
        );
    }
    match &c.histogram {
        Some(h) => {
            let items: Vec<String> = h.iter().map(|(k, v)| format!("{k:?}: {v}")).collect();
            s += &format!(", value counts {{{}}}", items.join(", "));
        }
        None if !c.sample_values.is_empty() => {
            let items: Vec<String> = c.sample_values.iter().map(|v| format!("{v:?}")).collect();
            s += &format!(", e.g. {}", items.join(", "));
        }
        None => {}
    }
    s
}

/// Profile lines for `columns`, or for every column when `None`.
pub fn render_profile(profile: &ProfileArtifact, columns: Option<&[String]>) -> String {
    let mut out = format!("{} rows\n", profile.row_count);
    for c in &profile.columns {
        if columns.is_none_or(|cols| cols.contains(&c.name)) {
            out += &render_column_profile(c);
            out.push('\n');
        }
    }
    out
}

/// Pull a JSON value out of a reply that may wrap it in prose or fences.
pub fn extract_json(text: &str) -> Option<Json> {
    let t = text.trim();
    if let Ok(v) = serde_json::from_str(t) {
        return Some(v);
    }
    let unfenced = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .and_then(|s| s.trim_end().strip_suffix("```"));
    if let Some(v) = unfenced.and_then(|s| serde_json::from_str(s.trim()).ok()) {
        return Some(v);
    }
    let (start, end) = (t.find('{')?, t.rfind('}')?);
    (start < end)
        .then(|| serde_json::from_str(&t[start..=end]).ok())
        .flatten()
}

fn string_list(v: &Json, field: &str) -> std::result::Result<Vec<String>, String> {
    v.get(field)
        .and_then(Json::as_array)
        .ok_or_else(|| format!("expected an object with a \"{field}\" array"))?
        .iter()
        .map(|x| {
            x.as_str()
                .map(str::to_owned)
                .ok_or_else(|| format!("\"{field}\" must hold strings"))
        })
        .collect()
}

fn raw_spans(v: &Json) -> std::result::Result<Vec<(i64, i64)>, String> {
    let pair = |x: &Json| -> Option<(i64, i64)> {
        if let Some(a) = x.as_array() {
            return match a.as_slice() {
                [s, e] => Some((s.as_i64()?, e.as_i64()?)),
                [s] => Some((s.as_i64()?, s.as_i64()?)),
                _ => None,
            };
        }
        if let Some(n) = x.as_i64() {
            return Some((n, n));
        }
        Some((x.get("start_line")?.as_i64()?, x.get("end_line")?.as_i64()?))
    };
    v.as_array()
        .ok_or("spans must be an array")?
        .iter()
        .map(|x| pair(x).ok_or_else(|| format!("unreadable span {x}")))
        .collect()
}

/// Keep spans inside `1..=lines`, clipping partial overlaps and dropping the
/// rest; both with a warning.
pub fn clip_spans(raw: &[(i64, i64)], lines: usize, file: &str) -> Vec<CodeSpan> {
    let n = lines as i64;
    let mut out = BTreeSet::new();
    for &(s, e) in raw {
        if s > e || e < 1 || s > n {
            log::warn!("dropping span {s}-{e} outside {file} (1-{n})");
            continue;
        }
        let (cs, ce) = (s.max(1), e.min(n));
        if (cs, ce) != (s, e) {
            log::warn!("clipping span {s}-{e} to {cs}-{ce} in {file}");
        }
        out.insert(CodeSpan::new(file, cs as usize, ce as usize).expect("clipped span is valid"));
    }
    out.into_iter().collect()
}

/// Model-backed steps bound to one backend, prompt set and configuration.
pub struct Generator<'a> {
    pub backend: &'a dyn Backend,
    pub prompts: &'a PromptSet,
    pub config: &'a PipelineConfig,
}

impl<'a> Generator<'a> {
    pub fn new(backend: &'a dyn Backend, prompts: &'a PromptSet, config: &'a PipelineConfig) -> Self {
        Self {
            backend,
            prompts,
            config,
        }
    }

    /// Render `template`, call the backend and parse the reply, re-asking up
    /// to `max_repairs` times when `parse` rejects it.
    pub(crate) fn ask<T>(
        &self,
        template: &str,
        key: String,
        bindings: &[(&str, &str)],
        parse: impl Fn(&Json) -> std::result::Result<T, String>,
    ) -> Result<T> {
        let base = self.prompts.render(template, bindings)?;
        let mut request = ModelRequest {
            method: template.to_owned(),
            key,
            prompt: base.clone(),
            model: self.config.model.clone(),
            decoding: self.config.decoding.clone(),
        };
        let mut problem = String::new();
        for attempt in 0..=self.config.max_repairs {
            if attempt > 0 {
                request.prompt = format!(
                    "{base}\n\n{REPAIR_MARKER}: {problem}. Reply again with only the JSON object described above."
                );
            }
            let reply = self.backend.complete(&request)?;
            problem = match extract_json(&reply.text) {
                None => "it was not valid JSON".to_owned(),
                Some(v) => match parse(&v) {
                    Ok(t) => return Ok(t),
                    Err(e) => e,
                },
            };
            log::warn!("{} {}: malformed reply ({problem})", request.method, request.key);
        }
        Err(Error::Generation(format!(
            "{} {}: no usable reply after {} attempts: {problem}",
            request.method,
            request.key,
            self.config.max_repairs + 1
        )))
    }

    fn key(ctx: &GenerationContext, subject: &str) -> String {
        format!("{}__{subject}", ctx.task_id)
    }

    /// Accessed columns in schema order; names outside the schema are
    /// dropped with a warning.
    pub fn discover_column_access(&self, ctx: &GenerationContext) -> Result<Vec<String>> {
        let schema = ctx.schema();
        if schema.is_empty() {
            return Err(Error::Schema(format!("task {}: sample has no columns", ctx.task_id)));
        }
        let profile = render_profile(&ctx.profile, None);
        let names = self.ask(
            "discover_column_access",
            Self::key(ctx, "task"),
            &[
                ("columns", &backticked(&schema)),
                ("profile", &profile),
                ("code", &ctx.source),
            ],
            |v| string_list(v, "columns"),
        )?;
        for n in names.iter().filter(|n| !schema.contains(n)) {
            log::warn!("task {}: ignoring unknown column {n:?}", ctx.task_id);
        }
        Ok(schema.into_iter().filter(|c| names.contains(c)).collect())
    }

    /// Column sets of size two or more drawn from `accessed`, canonicalized
    /// and deduplicated in first-seen order.
    pub fn discover_joint_column_access(
        &self,
        ctx: &GenerationContext,
        accessed: &[String],
    ) -> Result<Vec<ColumnNode>> {
        if accessed.len() < 2 {
            return Ok(Vec::new());
        }
        let profile = render_profile(&ctx.profile, Some(accessed));
        let sets = self.ask(
            "discover_joint_column_access",
            Self::key(ctx, "task"),
            &[
                ("accessed_columns", &backticked(accessed)),
                ("profile", &profile),
                ("code", &ctx.source),
            ],
            |v| {
                v.get("column_sets")
                    .and_then(Json::as_array)
                    .ok_or_else(|| "expected an object with a \"column_sets\" array".to_owned())?
                    .iter()
                    .map(|s| string_list(&serde_json::json!({ "s": s }), "s"))
                    .collect::<std::result::Result<Vec<_>, _>>()
            },
        )?;
        let mut out: Vec<ColumnNode> = Vec::new();
        for set in sets {
            let (known, unknown): (Vec<String>, Vec<String>) = set.into_iter().partition(|c| accessed.contains(c));
            if !unknown.is_empty() {
                log::warn!(
                    "task {}: dropping non-accessed columns {unknown:?} from a joint set",
                    ctx.task_id
                );
            }
            let node = ColumnNode::set(&known);
            if node.names().len() >= 2 && !out.contains(&node) {
                out.push(node);
            }
        }
        Ok(out)
    }

    /// Code spans operating on a column (or jointly on a column set).
    pub fn dataflow(&self, ctx: &GenerationContext, node: &ColumnNode) -> Result<Vec<CodeSpan>> {
        let code = numbered(&ctx.source);
        let names: Vec<String> = node.names().to_vec();
        let raw = if node.is_set() {
            self.ask(
                "multi_column_dataflow",
                Self::key(ctx, &node.to_string()),
                &[("columns", &backticked(&names)), ("code_numbered", &code)],
                |v| raw_spans(v.get("spans").unwrap_or(&Json::Null)),
            )?
        } else {
            self.ask(
                "column_dataflow",
                Self::key(ctx, &node.to_string()),
                &[("column", &names[0]), ("code_numbered", &code)],
                |v| raw_spans(v.get("spans").unwrap_or(&Json::Null)),
            )?
        };
        Ok(clip_spans(&raw, ctx.line_count(), &ctx.file))
    }

    /// Natural-language assumptions the node's code relies on, each with the
    /// spans it cites (the node's spans when it cites none).
    pub fn summarize_assumptions(
        &self,
        ctx: &GenerationContext,
        node: &ColumnNode,
        node_spans: &[CodeSpan],
        annotated: &str,
    ) -> Result<Vec<(String, Vec<CodeSpan>)>> {
        if node_spans.is_empty() {
            return Ok(Vec::new());
        }
        let names = node.names().to_vec();
        let profile = render_profile(&ctx.profile, Some(&names));
        let items = self.ask(
            "summarize_link",
            Self::key(ctx, &node.to_string()),
            &[
                ("node", &backticked(&names)),
                ("annotated_code", &numbered(annotated)),
                ("profile", &profile),
            ],
            |v| {
                v.get("assumptions")
                    .and_then(Json::as_array)
                    .ok_or_else(|| "expected an object with an \"assumptions\" array".to_owned())?
                    .iter()
                    .map(|a| {
                        let text = a
                            .get("text")
                            .and_then(Json::as_str)
                            .ok_or_else(|| "each assumption needs a \"text\" string".to_owned())?;
                        let lines = match a.get("lines") {
                            None | Some(Json::Null) => Vec::new(),
                            Some(l) => raw_spans(l)?,
                        };
                        Ok((text.trim().to_owned(), lines))
                    })
                    .collect::<std::result::Result<Vec<_>, String>>()
            },
        )?;
        let mut out: Vec<(String, Vec<CodeSpan>)> = Vec::new();
        for (text, lines) in items {
            if text.is_empty() {
                log::warn!("task {}: skipping empty assumption for {node}", ctx.task_id);
                continue;
            }
            let mut spans = clip_spans(&lines, ctx.line_count(), &ctx.file);
            if spans.is_empty() {
                spans = node_spans.to_vec();
            }
            match out.iter_mut().find(|(t, _)| *t == text) {
                Some((_, s)) => s.extend(spans),
                None => out.push((text, spans)),
            }
        }
        Ok(out)
    }

    /// Constraints for a node from the assumptions linked to it. Unknown or
    /// missing assumption ids fall back to all of the node's assumptions.
    pub fn generate_constraints(
        &self,
        ctx: &GenerationContext,
        node: &ColumnNode,
        graph: &AssumptionGraph,
    ) -> Result<NodeConstraints> {
        let linked: Vec<&Assumption> = graph
            .edges()
            .iter()
            .filter(|e| &e.column == node)
            .filter_map(|e| graph.assumption(&e.assumption_id))
            .collect();
        if linked.is_empty() {
            return Ok(NodeConstraints::default());
        }
        let listing: String = linked.iter().map(|a| format!("{}: {}\n", a.id, a.text)).collect();
        let names = node.names().to_vec();
        let profile = render_profile(&ctx.profile, Some(&names));
        let parse = |v: &Json| {
            v.get("constraints")
                .and_then(Json::as_array)
                .ok_or_else(|| "expected an object with a \"constraints\" array".to_owned())?
                .iter()
                .map(|c| match c {
                    Json::String(s) => Ok((s.clone(), Vec::new())),
                    _ => {
                        let text = c
                            .get("text")
                            .and_then(Json::as_str)
                            .ok_or_else(|| "each constraint needs a \"text\" string".to_owned())?;
                        let ids = match c.get("assumption_ids") {
                            None | Some(Json::Null) => Vec::new(),
                            Some(_) => string_list(c, "assumption_ids")?,
                        };
                        Ok((text.to_owned(), ids))
                    }
                })
                .collect::<std::result::Result<Vec<_>, String>>()
        };
        let items = if node.is_set() {
            self.ask(
                "gen_multi_column_constraints",
                Self::key(ctx, &node.to_string()),
                &[
                    ("columns", &backticked(&names)),
                    ("assumptions", &listing),
                    ("profile", &profile),
                    ("grammar", GRAMMAR),
                ],
                parse,
            )?
        } else {
            self.ask(
                "gen_column_constraints",
                Self::key(ctx, &node.to_string()),
                &[
                    ("column", &names[0]),
                    ("assumptions", &listing),
                    ("profile", &profile),
                    ("grammar", GRAMMAR),
                ],
                parse,
            )?
        };
        let all_ids: Vec<String> = linked.iter().map(|a| a.id.clone()).collect();
        let mut out = NodeConstraints::default();
        for (text, ids) in items {
            let parsed = match parse_constraint(&text) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("task {}: non-executable constraint {text:?}: {e}", ctx.task_id);
                    out.non_executable.push(text);
                    continue;
                }
            };
            let mut ids: Vec<String> = ids.into_iter().filter(|i| all_ids.contains(i)).collect();
            if ids.is_empty() {
                ids = all_ids.clone();
            }
            match out.constraints.iter_mut().find(|c| c.same_rule(&parsed)) {
                Some(existing) => merge_ids(&mut existing.assumption_ids, ids),
                None => out.constraints.push(parsed.with_assumptions(ids)),
            }
        }
        Ok(out)
    }
}

fn merge_ids(into: &mut Vec<String>, ids: Vec<String>) {
    for id in ids {
        if !into.contains(&id) {
            into.push(id);
        }
    }
}

/// The full workflow for one task: discover, trace dataflow, annotate,
/// summarize and link, generate, then precheck on `sample`. A failing column
/// node is dropped; failing discovery aborts the task.
pub fn generate_unit_test(gen: &Generator<'_>, ctx: &GenerationContext, sample: &Dataset) -> Result<Generated> {
    let workers = gen.config.parallelism.max(1);
    let accessed = gen.discover_column_access(ctx)?;
    let joint = gen.discover_joint_column_access(ctx, &accessed).unwrap_or_else(|e| {
        log::warn!("task {}: joint access discovery failed: {e}", ctx.task_id);
        Vec::new()
    });
    let nodes: Vec<ColumnNode> = accessed.iter().map(ColumnNode::single).chain(joint).collect();

    let mut graph = AssumptionGraph::new();
    let mut stats = Stats::default();
    let fail = |node: &ColumnNode, stage: &str, e: &Error, stats: &mut Stats| {
        log::warn!("task {}: {stage} failed for {node}: {e}", ctx.task_id);
        stats.failed_nodes.push(node.to_string());
    };

    let flows = fan_out(&nodes, workers, |n| gen.dataflow(ctx, n));
    let mut live: Vec<(ColumnNode, Vec<CodeSpan>)> = Vec::new();
    for (node, flow) in nodes.iter().zip(flows) {
        graph.add_column(node.clone());
        match flow {
            Ok(spans) => live.push((node.clone(), spans)),
            Err(e) => fail(node, "dataflow analysis", &e, &mut stats),
        }
    }

    let mut by_column: BTreeMap<String, Vec<CodeSpan>> = BTreeMap::new();
    for (node, spans) in &live {
        for c in node.names() {
            by_column.entry(c.clone()).or_default().extend(spans.iter().cloned());
        }
    }
    let annotated = annotate_code(&ctx.source, &by_column)?;

    let summaries = fan_out(&live, workers, |(n, spans)| {
        gen.summarize_assumptions(ctx, n, spans, &annotated)
    });
    let mut summarized: Vec<ColumnNode> = Vec::new();
    let mut next_id = 1;
    for ((node, _), result) in live.iter().zip(summaries) {
        let items = match result {
            Ok(items) => items,
            Err(e) => {
                fail(node, "assumption summary", &e, &mut stats);
                continue;
            }
        };
        let kind = if node.is_set() {
            AssumptionKind::MultiColumn
        } else {
            AssumptionKind::SingleColumn
        };
        for (text, spans) in items {
            let id = match graph.assumptions().iter().find(|a| a.text == text) {
                Some(a) => a.id.clone(),
                None => {
                    next_id += 1;
                    format!("a{}", next_id - 1)
                }
            };
            graph.link(node, Assumption::new(id, text, kind), &spans)?;
        }
        summarized.push(node.clone());
    }

    let results = fan_out(&summarized, workers, |n| gen.generate_constraints(ctx, n, &graph));
    let mut candidates: Vec<Constraint> = Vec::new();
    for (node, result) in summarized.iter().zip(results) {
        match result {
            Ok(nc) => {
                stats.non_executable += nc.non_executable.len();
                for c in nc.constraints {
                    match candidates.iter_mut().find(|x| x.same_rule(&c)) {
                        Some(existing) => merge_ids(&mut existing.assumption_ids, c.assumption_ids),
                        None => candidates.push(c),
                    }
                }
            }
            Err(e) => fail(node, "constraint generation", &e, &mut stats),
        }
    }

    stats.generated = candidates.len();
    let mut test = DataUnitTest::new(format!("{}-test", ctx.task_id), ctx.task_id.clone());
    test.accessed_columns = accessed;
    for c in candidates {
        match precheck_constraint(&c, sample) {
            Precheck::Accept => {
                let id = format!("c{}", test.constraints.len() + 1);
                test.push(c.with_id(id))?;
            }
            Precheck::Discard(reason) => {
                log::info!("task {}: discarding {} ({reason})", ctx.task_id, c.render());
                stats.discarded += 1;
                *stats.discard_reasons.entry(reason).or_default() += 1;
            }
        }
    }
    Ok(Generated { test, graph, stats })
}

fn literal_for(key: &str, kind: ValueKind) -> Literal {
    match parse_value(key, kind) {
        Some(Value::Integer(i)) => Literal::Integer(i),
        Some(Value::Real(r)) => Literal::Real(r),
        Some(Value::Boolean(b)) => Literal::Boolean(b),
        _ => Literal::Text(key.to_owned()),
    }
}

/// Profile-only constraints, blind to any task: completeness at the observed
/// ratio (floored to two decimals), membership in the histogram, observed
/// numeric bounds, and uniqueness when nearly every value is distinct.
pub fn suggest_task_agnostic(profile: &ProfileArtifact) -> DataUnitTest {
    let mut test = DataUnitTest::new(format!("{}-agnostic", profile.dataset), profile.dataset.clone());
    let push = |test: &mut DataUnitTest, c: Constraint| {
        let id = format!("c{}", test.constraints.len() + 1);
        test.push(c.with_id(id)).expect("fresh ids are unique");
    };
    for c in &profile.columns {
        test.accessed_columns.push(c.name.clone());
        if c.completeness >= 1.0 {
            push(&mut test, Constraint::new(Verb::IsComplete, &c.name, None));
        } else {
            let floor = (c.completeness * 100.0 + 1e-9).floor() / 100.0;
            if floor > 0.0 {
                push(
                    &mut test,
                    Constraint::new(Verb::HasCompleteness, &c.name, Some(Predicate::at_least(floor))),
                );
            }
        }
        if let Some(h) = &c.histogram {
            if !h.is_empty() {
                let values = h.keys().map(|k| literal_for(k, c.inferred_type)).collect();
                push(&mut test, Constraint::new(Verb::IsContainedIn(values), &c.name, None));
            }
        }
        if c.inferred_type.is_numeric() {
            if let (Some(min), Some(max)) = (c.min, c.max) {
                push(
                    &mut test,
                    Constraint::new(Verb::HasMin, &c.name, Some(Predicate::at_least(min))),
                );
                push(
                    &mut test,
                    Constraint::new(Verb::HasMax, &c.name, Some(Predicate::at_most(max))),
                );
            }
        }
        let non_null = c.non_null_count(profile.row_count);
        if non_null > 0 && c.approx_distinct as f64 >= 0.99 * non_null as f64 {
            push(&mut test, Constraint::new(Verb::IsUnique, &c.name, None));
        }
    }
    test
}

#[cfg(test)]
mod tests;
