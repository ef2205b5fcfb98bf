//! In-memory columnar tables.
//!
//! A [`Dataset`] is an immutable, ordered list of typed columns of equal
//! length. Cells are [`Value`]s; every column holds a single non-null
//! [`ValueKind`] plus nulls. CSV ingestion infers the kind of each column
//! from its raw cells (see [`infer_kind`]).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Boolean,
    Integer,
    Real,
    Text,
}

impl ValueKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueKind::Integer | ValueKind::Real)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Boolean => "boolean",
            ValueKind::Integer => "integer",
            ValueKind::Real => "real",
            ValueKind::Text => "text",
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Null,
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn kind(&self) -> Option<ValueKind> {
        match self {
            Value::Null => None,
            Value::Boolean(_) => Some(ValueKind::Boolean),
            Value::Integer(_) => Some(ValueKind::Integer),
            Value::Real(_) => Some(ValueKind::Real),
            Value::Text(_) => Some(ValueKind::Text),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Text form used for CSV cells. Reals always carry a decimal point or
    /// exponent so they re-infer as reals.
    pub fn to_cell(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Boolean(b) => b.to_string(),
            Value::Integer(i) => i.to_string(),
            Value::Real(r) => format!("{r:?}"),
            Value::Text(s) => s.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            other => f.write_str(&other.to_cell()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnVector {
    name: String,
    kind: ValueKind,
    values: Vec<Value>,
    null_mask: Vec<bool>,
}

impl ColumnVector {
    pub fn new(name: impl Into<String>, kind: ValueKind, values: Vec<Value>) -> Result<Self> {
        let name = name.into();
        if let Some((row, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.kind().is_some_and(|k| k != kind))
        {
            return Err(Error::Schema(format!(
                "column {name:?} is {kind} but row {row} holds {v:?}"
            )));
        }
        let null_mask = values.iter().map(Value::is_null).collect();
        Ok(Self {
            name,
            kind,
            values,
            null_mask,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn null_mask(&self) -> &[bool] {
        &self.null_mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn null_count(&self) -> usize {
        self.null_mask.iter().filter(|&&n| n).count()
    }

    pub fn non_null(&self) -> impl Iterator<Item = &Value> {
        self.values.iter().filter(|v| !v.is_null())
    }

    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..self.clone()
        }
    }

    pub fn into_values(self) -> Vec<Value> {
        self.values
    }

    fn take(&self, rows: &[usize]) -> Self {
        let values: Vec<Value> = rows.iter().map(|&r| self.values[r].clone()).collect();
        let null_mask = rows.iter().map(|&r| self.null_mask[r]).collect();
        Self {
            name: self.name.clone(),
            kind: self.kind,
            values,
            null_mask,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    columns: Vec<ColumnVector>,
    row_count: usize,
}

impl Dataset {
    pub fn new(columns: Vec<ColumnVector>, row_count: usize) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name()) {
                return Err(Error::Schema(format!("duplicate column name {:?}", c.name())));
            }
            if c.len() != row_count {
                return Err(Error::Schema(format!(
                    "column {:?} has {} values, expected {row_count}",
                    c.name(),
                    c.len()
                )));
            }
        }
        Ok(Self { columns, row_count })
    }

    /// Builds a dataset whose row count is taken from the first column.
    pub fn from_columns(columns: Vec<ColumnVector>) -> Result<Self> {
        let rows = columns.first().map_or(0, ColumnVector::len);
        Self::new(columns, rows)
    }

    /// Row-major construction with declared kinds.
    pub fn from_rows(schema: &[(&str, ValueKind)], rows: Vec<Vec<Value>>) -> Result<Self> {
        let mut cols: Vec<Vec<Value>> = vec![Vec::with_capacity(rows.len()); schema.len()];
        let n = rows.len();
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    schema.len()
                )));
            }
            for (col, v) in cols.iter_mut().zip(row) {
                col.push(v);
            }
        }
        let columns = schema
            .iter()
            .zip(cols)
            .map(|((name, kind), values)| ColumnVector::new(*name, *kind, values))
            .collect::<Result<Vec<_>>>()?;
        Self::new(columns, n)
    }

    pub fn columns(&self) -> &[ColumnVector] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(ColumnVector::name).collect()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnVector> {
        self.columns.iter().find(|c| c.name() == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name() == name)
    }

    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Dataset> {
        let columns = names
            .iter()
            .map(|n| {
                self.column(n.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::Schema(format!("unknown column {:?}", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(columns, self.row_count)
    }

    /// Keeps the rows at `rows`, in that order (indices may repeat).
    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
            row_count: rows.len(),
        }
    }

    pub fn filter_rows(&self, keep: &[bool]) -> Dataset {
        let rows: Vec<usize> = keep.iter().enumerate().filter_map(|(i, &k)| k.then_some(i)).collect();
        self.take_rows(&rows)
    }

    pub fn row(&self, index: usize) -> Vec<&Value> {
        self.columns.iter().map(|c| &c.values()[index]).collect()
    }

    pub fn into_columns(self) -> Vec<ColumnVector> {
        self.columns
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let map_err = |e: csv::Error| Error::Format(e.to_string());
        if self.columns.is_empty() {
            // A header-only table with no columns cannot express row_count.
            w.write_record(std::iter::empty::<&str>()).map_err(map_err)?;
        } else {
            w.write_record(self.columns.iter().map(ColumnVector::name))
                .map_err(map_err)?;
            for r in 0..self.row_count {
                w.write_record(self.columns.iter().map(|c| c.values()[r].to_cell()))
                    .map_err(map_err)?;
            }
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TableFormat {
    #[default]
    Csv,
}

pub fn load_table(path: impl AsRef<Path>, format: TableFormat) -> Result<Dataset> {
    let path = path.as_ref();
    match format {
        TableFormat::Csv => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            read_csv(std::io::BufReader::new(file))
        }
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("duplicate header name {h:?}")));
        }
    }
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        for (col, cell) in raw.iter_mut().zip(record.iter()) {
            col.push(cell.to_owned());
        }
        rows += 1;
    }
    let kinds = infer_types(&raw);
    let columns = headers
        .into_iter()
        .zip(raw)
        .zip(kinds)
        .map(|((name, cells), kind)| {
            let values = cells.iter().map(|c| parse_cell(c, kind)).collect();
            ColumnVector::new(name, kind, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(columns, rows)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Column kinds for a column-major matrix of raw cells.
pub fn infer_types<S: AsRef<str>>(raw_columns: &[Vec<S>]) -> Vec<ValueKind> {
    raw_columns.iter().map(|c| infer_kind(c)).collect()
}

/// Integer if every non-empty cell is an integer, else real if every
/// non-empty cell is a number, else boolean if every non-empty cell is
/// `true`/`false` (any case), else text.
pub fn infer_kind<S: AsRef<str>>(cells: &[S]) -> ValueKind {
    let non_empty = || cells.iter().map(AsRef::as_ref).filter(|c| !c.is_empty());
    if non_empty().all(|c| c.parse::<i64>().is_ok()) {
        ValueKind::Integer
    } else if non_empty().all(|c| c == "NaN" || parse_number(c).is_some()) {
        ValueKind::Real
    } else if non_empty().all(|c| parse_bool(c).is_some()) {
        ValueKind::Boolean
    } else {
        ValueKind::Text
    }
}

/// Parse one cell as `kind`; `None` if the text does not fit the kind.
/// The empty string (and `NaN` for reals) is null.
pub fn parse_value(cell: &str, kind: ValueKind) -> Option<Value> {
    if cell.is_empty() || (kind == ValueKind::Real && cell == "NaN") {
        return Some(Value::Null);
    }
    match parse_cell(cell, kind) {
        Value::Null => None,
        v => Some(v),
    }
}

fn parse_cell(cell: &str, kind: ValueKind) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    match kind {
        ValueKind::Integer => cell.parse().map_or(Value::Null, Value::Integer),
        ValueKind::Real if cell == "NaN" => Value::Null,
        ValueKind::Real => parse_number(cell).map_or(Value::Null, Value::Real),
        ValueKind::Boolean => parse_bool(cell).map_or(Value::Null, Value::Boolean),
        ValueKind::Text => Value::Text(cell.to_owned()),
    }
}

/// Decimal numbers only: optional sign, digits with optional fraction,
/// optional exponent. Words such as `inf` are not numbers.
fn parse_number(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let mut saw_digit = false;
    let mut chars = body.chars().peekable();
    while chars.peek().is_some_and(char::is_ascii_digit) {
        chars.next();
        saw_digit = true;
    }
    if chars.peek() == Some(&'.') {
        chars.next();
        while chars.peek().is_some_and(char::is_ascii_digit) {
            chars.next();
            saw_digit = true;
        }
    }
    if !saw_digit {
        return None;
    }
    if matches!(chars.peek(), Some('e' | 'E')) {
        chars.next();
        if matches!(chars.peek(), Some('+' | '-')) {
            chars.next();
        }
        let mut exp_digit = false;
        while chars.peek().is_some_and(char::is_ascii_digit) {
            chars.next();
            exp_digit = true;
        }
        if !exp_digit {
            return None;
        }
    }
    if chars.next().is_some() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    if s.eq_ignore_ascii_case("true") {
        Some(true)
    } else if s.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub id: String,
    pub data: Dataset,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct BatchMeta {
    id: String,
    provenance: String,
}

impl Batch {
    pub fn new(id: impl Into<String>, data: Dataset, provenance: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            data,
            provenance: provenance.into(),
        }
    }

    /// Writes `<dir>/<id>.csv` and `<dir>/<id>.meta.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.data.save_csv(dir.join(format!("{}.csv", self.id)))?;
        let meta = BatchMeta {
            id: self.id.clone(),
            provenance: self.provenance.clone(),
        };
        let path = dir.join(format!("{}.meta.json", self.id));
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a batch back; a missing meta file yields provenance `"unknown"`.
    pub fn load(dir: impl AsRef<Path>, id: &str) -> Result<Batch> {
        let dir = dir.as_ref();
        let data = load_table(dir.join(format!("{id}.csv")), TableFormat::Csv)?;
        let meta_path = dir.join(format!("{id}.meta.json"));
        let provenance = match fs::read_to_string(&meta_path) {
            Ok(text) => {
                let meta: BatchMeta = serde_json::from_str(&text)?;
                if meta.id != id {
                    return Err(Error::Schema(format!(
                        "meta file {} names batch {:?}",
                        meta_path.display(),
                        meta.id
                    )));
                }
                meta.provenance
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => "unknown".to_owned(),
            Err(e) => return Err(Error::io(meta_path, e)),
        };
        Ok(Batch::new(id, data, provenance))
    }
}

/// Directory of batches laid out as `<root>/<id>.csv` + `<id>.meta.json`.
#[derive(Clone, Debug)]
pub struct BatchRegistry {
    root: PathBuf,
}

impl BatchRegistry {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ids(&self) -> Result<Vec<String>> {
        let entries = fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".csv") {
                ids.push(id.to_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load(&self, id: &str) -> Result<Batch> {
        Batch::load(&self.root, id)
    }

    pub fn insert(&self, batch: &Batch) -> Result<()> {
        batch.save(&self.root)
    }
}

/// Checks that a batch carries the same header set as the reference sample.
pub fn check_same_schema(reference: &Dataset, batch: &Dataset) -> Result<()> {
    let a: HashSet<&str> = reference.column_names().into_iter().collect();
    let b: HashSet<&str> = batch.column_names().into_iter().collect();
    if a == b {
        return Ok(());
    }
    let mut missing: Vec<_> = a.difference(&b).copied().collect();
    let mut extra: Vec<_> = b.difference(&a).copied().collect();
    missing.sort_unstable();
    extra.sort_unstable();
    Err(Error::Schema(format!(
        "header mismatch: missing {missing:?}, unexpected {extra:?}"
    )))
}
