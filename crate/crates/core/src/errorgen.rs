//! Seeded error injection: ordered lists of corruption operators applied
//! to a clean dataset to produce an erroneous batch.
//!
//! Affected rows are drawn without replacement from a single [`SplitMix64`]
//! stream seeded with the config's seed; each operator consumes the stream
//! in application order, so the same dataset and config always produce the
//! same bytes.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::dsl::{filtered_rows, parse_row_expr};
use crate::error::{Error, Result};
use crate::profiler::population_moments;
use crate::rng::SplitMix64;
use crate::tabular::{infer_kind, parse_value, Batch, ColumnVector, Dataset, Value, ValueKind};

pub const DEFAULT_MAX_COLUMN_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    DropColumn,
    RenameColumn,
    DuplicateRows,
    ShuffleColumnOrder,
    InjectNulls,
    DuplicateKeyValues,
    BreakConditionalDependency,
    OutOfDomainCategory,
    ScaleValues,
    InjectOutliers,
    NegateValues,
    ConstantCollapse,
    CaseFlip,
    WhitespacePadding,
    TruncateStrings,
    UnicodeConfusables,
    NumericToStringLocale,
    DateFormatShift,
    BooleanEncodingShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Structural,
    Integrity,
    Numerical,
    Textual,
    Format,
}

/// What an operator needs from its target columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Needs {
    Nothing,
    AnyColumn,
    Numeric,
    Text,
    Boolean,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 19] = [
        OperatorKind::DropColumn,
        OperatorKind::RenameColumn,
        OperatorKind::DuplicateRows,
        OperatorKind::ShuffleColumnOrder,
        OperatorKind::InjectNulls,
        OperatorKind::DuplicateKeyValues,
        OperatorKind::BreakConditionalDependency,
        OperatorKind::OutOfDomainCategory,
        OperatorKind::ScaleValues,
        OperatorKind::InjectOutliers,
        OperatorKind::NegateValues,
        OperatorKind::ConstantCollapse,
        OperatorKind::CaseFlip,
        OperatorKind::WhitespacePadding,
        OperatorKind::TruncateStrings,
        OperatorKind::UnicodeConfusables,
        OperatorKind::NumericToStringLocale,
        OperatorKind::DateFormatShift,
        OperatorKind::BooleanEncodingShift,
    ];

    pub fn family(self) -> Family {
        use OperatorKind::*;
        match self {
            DropColumn | RenameColumn | DuplicateRows | ShuffleColumnOrder => Family::Structural,
            InjectNulls | DuplicateKeyValues | BreakConditionalDependency | OutOfDomainCategory => Family::Integrity,
            ScaleValues | InjectOutliers | NegateValues | ConstantCollapse => Family::Numerical,
            CaseFlip | WhitespacePadding | TruncateStrings | UnicodeConfusables => Family::Textual,
            NumericToStringLocale | DateFormatShift | BooleanEncodingShift => Family::Format,
        }
    }

    pub fn name(self) -> &'static str {
        use OperatorKind::*;
        match self {
            DropColumn => "drop_column",
            RenameColumn => "rename_column",
            DuplicateRows => "duplicate_rows",
            ShuffleColumnOrder => "shuffle_column_order",
            InjectNulls => "inject_nulls",
            DuplicateKeyValues => "duplicate_key_values",
            BreakConditionalDependency => "break_conditional_dependency",
            OutOfDomainCategory => "out_of_domain_category",
            ScaleValues => "scale_values",
            InjectOutliers => "inject_outliers",
            NegateValues => "negate_values",
            ConstantCollapse => "constant_collapse",
            CaseFlip => "case_flip",
            WhitespacePadding => "whitespace_padding",
            TruncateStrings => "truncate_strings",
            UnicodeConfusables => "unicode_confusables",
            NumericToStringLocale => "numeric_to_string_locale",
            DateFormatShift => "date_format_shift",
            BooleanEncodingShift => "boolean_encoding_shift",
        }
    }

    fn needs(self) -> Needs {
        use OperatorKind::*;
        match self {
            DuplicateRows | ShuffleColumnOrder => Needs::Nothing,
            DropColumn
            | RenameColumn
            | InjectNulls
            | DuplicateKeyValues
            | BreakConditionalDependency
            | OutOfDomainCategory => Needs::AnyColumn,
            ScaleValues | InjectOutliers | NegateValues | ConstantCollapse | NumericToStringLocale => Needs::Numeric,
            CaseFlip | WhitespacePadding | TruncateStrings | UnicodeConfusables | DateFormatShift => Needs::Text,
            BooleanEncodingShift => Needs::Boolean,
        }
    }

    /// Operators that turn their target into a text column.
    fn makes_text(self) -> bool {
        matches!(
            self,
            OperatorKind::NumericToStringLocale | OperatorKind::BooleanEncodingShift
        )
    }
}

pub fn catalog() -> Vec<OperatorKind> {
    OperatorKind::ALL.to_vec()
}

fn default_fraction() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorOperator {
    pub kind: OperatorKind,
    #[serde(default)]
    pub target_columns: Vec<String>,
    #[serde(default = "default_fraction")]
    pub row_fraction: f64,
    #[serde(default)]
    pub params: Map<String, Json>,
}

impl ErrorOperator {
    pub fn new(kind: OperatorKind, targets: &[&str], row_fraction: f64) -> Self {
        Self {
            kind,
            target_columns: targets.iter().map(|s| s.to_string()).collect(),
            row_fraction,
            params: Map::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Json>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }

    fn number(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| self.bad_param(key, "a number")),
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| self.bad_param(key, "a non-negative integer")),
        }
    }

    fn text(&self, key: &str) -> Result<Option<&str>> {
        match self.params.get(key) {
            None => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| self.bad_param(key, "a string")),
        }
    }

    fn bad_param(&self, key: &str, wanted: &str) -> Error {
        Error::Config(format!("{}: parameter {key:?} must be {wanted}", self.kind.name()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorConfig {
    pub id: String,
    pub seed: u64,
    pub operators: Vec<ErrorOperator>,
}

impl ErrorConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("error config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Writes `<dir>/<id>.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.json", self.id));
        fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Static checks against a schema, following renames, drops and kind
/// changes in operator order. Only explicitly targeted columns count
/// towards `max_column_fraction`.
pub fn validate_config(cfg: &ErrorConfig, schema: &[(String, ValueKind)]) -> Result<()> {
    validate_config_with(cfg, schema, DEFAULT_MAX_COLUMN_FRACTION)
}

pub fn validate_config_with(cfg: &ErrorConfig, schema: &[(String, ValueKind)], max_column_fraction: f64) -> Result<()> {
    // Current name, kind and original name of each live column.
    let mut live: Vec<(String, ValueKind, String)> = schema.iter().map(|(n, k)| (n.clone(), *k, n.clone())).collect();
    let mut touched = BTreeSet::new();
    for (i, op) in cfg.operators.iter().enumerate() {
        let at = |msg: String| format!("operator {} ({}): {msg}", i + 1, op.kind.name());
        if !(op.row_fraction > 0.0 && op.row_fraction <= 1.0) {
            return Err(Error::Config(at(format!(
                "row_fraction {} outside (0, 1]",
                op.row_fraction
            ))));
        }
        let needs = op.kind.needs();
        if needs == Needs::Nothing {
            if !op.target_columns.is_empty() {
                return Err(Error::Config(at("takes no target columns".into())));
            }
        } else if op.target_columns.is_empty() {
            return Err(Error::Config(at("needs at least one target column".into())));
        }
        if op.kind == OperatorKind::RenameColumn && op.target_columns.len() != 1 {
            return Err(Error::Config(at("renames exactly one column".into())));
        }
        check_params(op).map_err(|e| match e {
            Error::Config(m) => Error::Config(at(m)),
            other => other,
        })?;
        for target in &op.target_columns {
            let Some(idx) = live.iter().position(|(n, ..)| n == target) else {
                return Err(Error::Schema(at(format!("unknown column {target:?}"))));
            };
            let kind = live[idx].1;
            let ok = match needs {
                Needs::Nothing | Needs::AnyColumn => true,
                Needs::Numeric => kind.is_numeric(),
                Needs::Text => kind == ValueKind::Text,
                Needs::Boolean => kind == ValueKind::Boolean,
            };
            if !ok {
                return Err(Error::Config(at(format!("column {target:?} has kind {kind}"))));
            }
            touched.insert(live[idx].2.clone());
            match op.kind {
                OperatorKind::DropColumn => {
                    live.remove(idx);
                }
                OperatorKind::RenameColumn => {
                    let new = op.text("new_name")?.expect("checked");
                    if live.iter().any(|(n, ..)| n == new) {
                        return Err(Error::Schema(at(format!("column {new:?} already exists"))));
                    }
                    live[idx].0 = new.to_owned();
                }
                k if k.makes_text() => live[idx].1 = ValueKind::Text,
                _ => {}
            }
        }
    }
    if !schema.is_empty() {
        let fraction = touched.len() as f64 / schema.len() as f64;
        if fraction > max_column_fraction {
            return Err(Error::Config(format!(
                "config {} touches {} of {} columns (limit {max_column_fraction})",
                cfg.id,
                touched.len(),
                schema.len()
            )));
        }
    }
    Ok(())
}

fn check_params(op: &ErrorOperator) -> Result<()> {
    use OperatorKind::*;
    match op.kind {
        RenameColumn => {
            if op.text("new_name")?.is_none_or(str::is_empty) {
                return Err(op.bad_param("new_name", "a non-empty string"));
            }
        }
        BreakConditionalDependency => {
            let cond = op
                .text("condition")?
                .ok_or_else(|| op.bad_param("condition", "a row expression"))?;
            parse_row_expr(cond).map_err(|e| Error::Config(format!("condition: {e}")))?;
            op.text("value")?;
        }
        OutOfDomainCategory => {
            op.text("value")?;
        }
        ScaleValues => {
            op.number("factor", 100.0)?;
        }
        InjectOutliers => {
            op.number("magnitude", 10.0)?;
        }
        WhitespacePadding => {
            op.count("pad", 2)?;
        }
        TruncateStrings => {
            op.count("length", 3)?;
        }
        DateFormatShift => {
            if let Some(f) = op.text("format")? {
                if f != "dmy" && f != "mdy" {
                    return Err(op.bad_param("format", "\"dmy\" or \"mdy\""));
                }
            }
        }
        BooleanEncodingShift => {
            op.text("true")?;
            op.text("false")?;
        }
        _ => {}
    }
    Ok(())
}

fn schema_of(d: &Dataset) -> Vec<(String, ValueKind)> {
    d.columns().iter().map(|c| (c.name().to_owned(), c.kind())).collect()
}

/// Number of rows an operator touches out of `n`.
pub fn affected_rows(row_fraction: f64, n: usize) -> usize {
    ((row_fraction * n as f64).floor() as usize).min(n)
}

/// Apply every operator in order. The config is validated against the
/// dataset's schema first.
pub fn apply_config(d: &Dataset, cfg: &ErrorConfig) -> Result<Dataset> {
    validate_config(cfg, &schema_of(d))?;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut cols: Vec<ColumnVector> = d.columns().to_vec();
    let mut rows = d.row_count();
    for op in &cfg.operators {
        apply_operator(op, &mut cols, &mut rows, &mut rng)?;
    }
    Dataset::new(cols, rows)
}

/// Corrupt a clean dataset into a batch whose provenance is the config id.
pub fn inject(d: &Dataset, cfg: &ErrorConfig, batch_id: impl Into<String>) -> Result<Batch> {
    Ok(Batch::new(batch_id, apply_config(d, cfg)?, cfg.id.clone()))
}

fn position(cols: &[ColumnVector], name: &str) -> Result<usize> {
    cols.iter()
        .position(|c| c.name() == name)
        .ok_or_else(|| Error::Schema(format!("unknown column {name:?}")))
}

fn rebuild(col: &ColumnVector, kind: ValueKind, values: Vec<Value>) -> Result<ColumnVector> {
    ColumnVector::new(col.name(), kind, values)
}

fn apply_operator(
    op: &ErrorOperator,
    cols: &mut Vec<ColumnVector>,
    rows: &mut usize,
    rng: &mut SplitMix64,
) -> Result<()> {
    use OperatorKind::*;
    let n = *rows;
    let k = affected_rows(op.row_fraction, n);
    match op.kind {
        DropColumn => {
            for t in &op.target_columns {
                let i = position(cols, t)?;
                cols.remove(i);
            }
        }
        RenameColumn => {
            let i = position(cols, &op.target_columns[0])?;
            let new = op.text("new_name")?.expect("validated");
            cols[i] = cols[i].renamed(new);
        }
        DuplicateRows => {
            let picked = rng.sample_indices(n, k);
            for c in cols.iter_mut() {
                let mut values = c.values().to_vec();
                values.extend(picked.iter().map(|&r| c.values()[r].clone()));
                *c = rebuild(c, c.kind(), values)?;
            }
            *rows = n + k;
        }
        ShuffleColumnOrder => {
            let mut order: Vec<usize> = (0..cols.len()).collect();
            rng.shuffle(&mut order);
            if order.len() > 1 && order.iter().enumerate().all(|(i, &j)| i == j) {
                order.swap(0, 1);
            }
            let old = std::mem::take(cols);
            *cols = order.into_iter().map(|i| old[i].clone()).collect();
        }
        BreakConditionalDependency => {
            let cond = parse_row_expr(op.text("condition")?.expect("validated"))?;
            let view = Dataset::new(cols.clone(), n)?;
            let eligible = filtered_rows(Some(&cond), &view);
            let picked: Vec<usize> = rng
                .sample_indices(eligible.len(), affected_rows(op.row_fraction, eligible.len()))
                .into_iter()
                .map(|i| eligible[i])
                .collect();
            for t in &op.target_columns {
                let i = position(cols, t)?;
                let replacement = match op.text("value")? {
                    Some(text) => cell_for(&cols[i], text, op)?,
                    None => Value::Null,
                };
                let mut values = cols[i].values().to_vec();
                for &r in &picked {
                    values[r] = replacement.clone();
                }
                cols[i] = rebuild(&cols[i], cols[i].kind(), values)?;
            }
        }
        ConstantCollapse => {
            for t in &op.target_columns {
                let i = position(cols, t)?;
                let col = &cols[i];
                let xs: Vec<f64> = col.non_null().filter_map(Value::as_f64).collect();
                let Some((mean, _)) = population_moments(&xs) else {
                    continue;
                };
                let constant = numeric(col.kind(), mean);
                let values = col
                    .values()
                    .iter()
                    .map(|v| if v.is_null() { Value::Null } else { constant.clone() })
                    .collect();
                cols[i] = rebuild(col, col.kind(), values)?;
            }
        }
        _ => {
            let picked = rng.sample_indices(n, k);
            for t in &op.target_columns {
                let i = position(cols, t)?;
                cols[i] = corrupt_cells(op, &cols[i], &picked, rng)?;
            }
        }
    }
    Ok(())
}

fn numeric(kind: ValueKind, x: f64) -> Value {
    match kind {
        ValueKind::Integer => Value::Integer(x.round() as i64),
        _ => Value::Real(x),
    }
}

/// Parse a replacement cell for a column, keeping the column's kind.
fn cell_for(col: &ColumnVector, text: &str, op: &ErrorOperator) -> Result<Value> {
    if col.kind() == ValueKind::Text {
        return Ok(Value::Text(text.to_owned()));
    }
    match parse_value(text, col.kind()) {
        Some(v) => Ok(v),
        None => Err(Error::Config(format!(
            "{}: value {text:?} does not fit {} column {:?}",
            op.kind.name(),
            col.kind(),
            col.name()
        ))),
    }
}

fn corrupt_cells(
    op: &ErrorOperator,
    col: &ColumnVector,
    picked: &[usize],
    rng: &mut SplitMix64,
) -> Result<ColumnVector> {
    use OperatorKind::*;
    let mut values = col.values().to_vec();
    let mut kind = col.kind();
    match op.kind {
        InjectNulls => {
            for &r in picked {
                values[r] = Value::Null;
            }
        }
        DuplicateKeyValues => {
            let n = values.len();
            if n > 1 {
                let original = values.clone();
                for &r in picked {
                    let mut donor = rng.below(n as u64 - 1) as usize;
                    if donor >= r {
                        donor += 1;
                    }
                    values[r] = original[donor].clone();
                }
            }
        }
        OutOfDomainCategory => {
            let v = match op.text("value")? {
                Some(text) => cell_for(col, text, op)?,
                None if kind == ValueKind::Text => Value::Text("__UNKNOWN__".into()),
                None if kind.is_numeric() => numeric(kind, -999_999.0),
                None => return Err(op.bad_param("value", "given for boolean columns")),
            };
            for &r in picked {
                values[r] = v.clone();
            }
        }
        ScaleValues | InjectOutliers | NegateValues => {
            let xs: Vec<f64> = col.non_null().filter_map(Value::as_f64).collect();
            let (mean, sd) = population_moments(&xs).unwrap_or((0.0, 0.0));
            let spread = if sd > 0.0 { sd } else { mean.abs().max(1.0) };
            let factor = op.number("factor", 100.0)?;
            let magnitude = op.number("magnitude", 10.0)?;
            for &r in picked {
                let Some(x) = values[r].as_f64() else { continue };
                let y = match op.kind {
                    ScaleValues => x * factor,
                    InjectOutliers => {
                        let sign = if rng.next_bool() { 1.0 } else { -1.0 };
                        mean + sign * magnitude * spread
                    }
                    _ => -x,
                };
                values[r] = numeric(kind, y);
            }
        }
        CaseFlip | WhitespacePadding | TruncateStrings | UnicodeConfusables | DateFormatShift => {
            let pad = " ".repeat(op.count("pad", 2)?);
            let length = op.count("length", 3)?;
            let mdy = op.text("format")? == Some("mdy");
            for &r in picked {
                let Value::Text(s) = &values[r] else { continue };
                let out = match op.kind {
                    CaseFlip => flip_case(s),
                    WhitespacePadding => format!("{pad}{s}{pad}"),
                    TruncateStrings => s.chars().take(length).collect(),
                    UnicodeConfusables => s.chars().map(confusable).collect(),
                    _ => shift_date(s, mdy).unwrap_or_else(|| s.clone()),
                };
                values[r] = Value::Text(out);
            }
        }
        NumericToStringLocale | BooleanEncodingShift => {
            let mut texts: Vec<Value> = values
                .iter()
                .map(|v| match v {
                    Value::Null => Value::Null,
                    other => Value::Text(other.to_cell()),
                })
                .collect();
            let yes = op.text("true")?.unwrap_or("yes");
            let no = op.text("false")?.unwrap_or("no");
            for &r in picked {
                texts[r] = match &values[r] {
                    Value::Null => Value::Null,
                    Value::Boolean(b) => Value::Text(if *b { yes } else { no }.to_owned()),
                    Value::Integer(i) => Value::Text(european(&i.to_string())),
                    Value::Real(x) => Value::Text(european(&format!("{x:?}"))),
                    Value::Text(s) => Value::Text(s.clone()),
                };
            }
            values = texts;
            kind = ValueKind::Text;
        }
        DropColumn
        | RenameColumn
        | DuplicateRows
        | ShuffleColumnOrder
        | BreakConditionalDependency
        | ConstantCollapse => unreachable!("handled by caller"),
    }
    rebuild(col, kind, values)
}

fn flip_case(s: &str) -> String {
    s.chars()
        .flat_map(|c| {
            if c.is_lowercase() {
                c.to_uppercase().collect::<Vec<_>>()
            } else if c.is_uppercase() {
                c.to_lowercase().collect()
            } else {
                vec![c]
            }
        })
        .collect()
}

fn confusable(c: char) -> char {
    match c {
        'a' => 'а',
        'c' => 'с',
        'e' => 'е',
        'i' => 'і',
        'o' => 'о',
        'p' => 'р',
        'x' => 'х',
        'y' => 'у',
        'A' => 'А',
        'B' => 'В',
        'C' => 'С',
        'E' => 'Е',
        'H' => 'Н',
        'K' => 'К',
        'M' => 'М',
        'O' => 'О',
        'P' => 'Р',
        'T' => 'Т',
        'X' => 'Х',
        other => other,
    }
}

/// `1234567.5` becomes `1.234.567,5`.
fn european(plain: &str) -> String {
    let (sign, rest) = match plain.strip_prefix('-') {
        Some(r) => ("-", r),
        None => ("", plain),
    };
    if rest.contains(['e', 'E']) {
        return plain.replace('.', ",");
    }
    let (int, frac) = match rest.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (rest, None),
    };
    let mut grouped = String::new();
    for (i, ch) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push('.');
        }
        grouped.push(ch);
    }
    match frac {
        Some(f) => format!("{sign}{grouped},{f}"),
        None => format!("{sign}{grouped}"),
    }
}

/// `YYYY-MM-DD[rest]` to `DD/MM/YYYY[rest]` (or `MM/DD/YYYY`).
fn shift_date(s: &str, mdy: bool) -> Option<String> {
    let b = s.as_bytes();
    let digits = |r: std::ops::Range<usize>| b.get(r).is_some_and(|x| x.iter().all(u8::is_ascii_digit));
    if !(digits(0..4) && b.get(4) == Some(&b'-') && digits(5..7) && b.get(7) == Some(&b'-') && digits(8..10)) {
        return None;
    }
    let (y, m, d, rest) = (&s[0..4], &s[5..7], &s[8..10], &s[10..]);
    Some(if mdy {
        format!("{m}/{d}/{y}{rest}")
    } else {
        format!("{d}/{m}/{y}{rest}")
    })
}

/// Kind a column would be re-inferred as after a CSV round trip.
pub fn reinferred_kind(col: &ColumnVector) -> ValueKind {
    let cells: Vec<String> = col.values().iter().map(Value::to_cell).collect();
    infer_kind(&cells)
}
