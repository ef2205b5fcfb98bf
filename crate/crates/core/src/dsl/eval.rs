use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Constraint, DataUnitTest, Literal, Operand, Predicate, RowExpr, Verb};
use crate::profiler::{min_max, population_moments, DistinctSketch, QuantileSketch, DEFAULT_SKETCH_SEED};
use crate::tabular::{Batch, ColumnVector, Dataset, Value, ValueKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalError {
    Schema,
    Type,
    Pattern,
}

impl EvalError {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalError::Schema => "schema",
            EvalError::Type => "type",
            EvalError::Pattern => "pattern",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintOutcome {
    pub constraint_id: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<EvalError>,
}

impl ConstraintOutcome {
    fn error(c: &Constraint, kind: EvalError, message: String) -> Self {
        Self {
            constraint_id: c.id.clone(),
            status: Status::Error,
            measured: None,
            message,
            error: Some(kind),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test_id: String,
    pub batch_id: String,
    pub outcomes: Vec<ConstraintOutcome>,
    pub verdict: Verdict,
}

impl TestReport {
    pub fn failed(&self) -> impl Iterator<Item = &ConstraintOutcome> {
        self.outcomes.iter().filter(|o| o.status == Status::Fail)
    }

    pub fn errors(&self) -> impl Iterator<Item = &ConstraintOutcome> {
        self.outcomes.iter().filter(|o| o.status == Status::Error)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Precheck {
    Accept,
    /// `fails_on_sample`, or the evaluation error kind.
    Discard(String),
}

/// Three-valued truth for row expressions over nullable cells.
type Truth = Option<bool>;

struct Scope<'a> {
    columns: HashMap<&'a str, &'a ColumnVector>,
}

impl<'a> Scope<'a> {
    fn new(d: &'a Dataset) -> Self {
        Self {
            columns: d.columns().iter().map(|c| (c.name(), c)).collect(),
        }
    }

    fn kind(&self, name: &str) -> Option<ValueKind> {
        self.columns.get(name).map(|c| c.kind())
    }

    fn value(&self, name: &str, row: usize) -> &'a Value {
        &self.columns[name].values()[row]
    }
}

fn literal_kind(l: &Literal) -> ValueKind {
    match l {
        Literal::Integer(_) => ValueKind::Integer,
        Literal::Real(_) => ValueKind::Real,
        Literal::Text(_) => ValueKind::Text,
        Literal::Boolean(_) => ValueKind::Boolean,
    }
}

fn literal_value(l: &Literal) -> Value {
    match l {
        Literal::Integer(i) => Value::Integer(*i),
        Literal::Real(r) => Value::Real(*r),
        Literal::Text(s) => Value::Text(s.clone()),
        Literal::Boolean(b) => Value::Boolean(*b),
    }
}

fn comparable(a: ValueKind, b: ValueKind) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

fn type_check(e: &RowExpr, scope: &Scope) -> Result<(), String> {
    match e {
        RowExpr::Const(_) | RowExpr::IsNull { .. } => Ok(()),
        RowExpr::Compare { left, op, right } => {
            let kind = |o: &Operand| match o {
                Operand::Column(c) => scope.kind(c).expect("columns checked first"),
                Operand::Literal(l) => literal_kind(l),
            };
            let (a, b) = (kind(left), kind(right));
            if comparable(a, b) {
                Ok(())
            } else {
                Err(format!("cannot compare {a} with {b} using {}", op.symbol()))
            }
        }
        RowExpr::Not(x) => type_check(x, scope),
        RowExpr::And(a, b) | RowExpr::Or(a, b) => {
            type_check(a, scope)?;
            type_check(b, scope)
        }
    }
}

/// Order two non-null values of comparable kinds. Integers compare exactly.
fn order(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => Some(x.cmp(y)),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        (Value::Boolean(x), Value::Boolean(y)) => Some(x.cmp(y)),
        _ => a.as_f64()?.partial_cmp(&b.as_f64()?),
    }
}

fn eval_row(e: &RowExpr, scope: &Scope, row: usize) -> Truth {
    match e {
        RowExpr::Const(b) => Some(*b),
        RowExpr::IsNull { column, negated } => Some(scope.value(column, row).is_null() != *negated),
        RowExpr::Compare { left, op, right } => {
            let owned;
            let l = match left {
                Operand::Column(c) => scope.value(c, row),
                Operand::Literal(lit) => {
                    owned = literal_value(lit);
                    &owned
                }
            };
            let owned_r;
            let r = match right {
                Operand::Column(c) => scope.value(c, row),
                Operand::Literal(lit) => {
                    owned_r = literal_value(lit);
                    &owned_r
                }
            };
            if l.is_null() || r.is_null() {
                return None;
            }
            order(l, r).map(|ord| op.holds(ord))
        }
        RowExpr::Not(x) => eval_row(x, scope, row).map(|b| !b),
        RowExpr::And(a, b) => match (eval_row(a, scope, row), eval_row(b, scope, row)) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        RowExpr::Or(a, b) => match (eval_row(a, scope, row), eval_row(b, scope, row)) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
    }
}

/// Rows for which `filter` is definitely true.
pub(crate) fn filtered_rows(filter: Option<&RowExpr>, d: &Dataset) -> Vec<usize> {
    let scope = Scope::new(d);
    (0..d.row_count())
        .filter(|&r| filter.is_none_or(|f| eval_row(f, &scope, r) == Some(true)))
        .collect()
}

#[derive(PartialEq, Eq, Hash)]
enum Key<'a> {
    Boolean(bool),
    Integer(i64),
    Real(u64),
    Text(&'a str),
}

fn key(v: &Value) -> Option<Key<'_>> {
    Some(match v {
        Value::Null => return None,
        Value::Boolean(b) => Key::Boolean(*b),
        Value::Integer(i) => Key::Integer(*i),
        Value::Real(r) => Key::Real(if *r == 0.0 { 0 } else { r.to_bits() }),
        Value::Text(s) => Key::Text(s),
    })
}

fn contained(v: &Value, set: &[Literal]) -> bool {
    set.iter().any(|lit| {
        let lv = literal_value(lit);
        match (v.kind(), lv.kind()) {
            (Some(a), Some(b)) if comparable(a, b) => order(v, &lv) == Some(Ordering::Equal),
            _ => false,
        }
    })
}

fn describe_predicate(p: Option<&Predicate>) -> String {
    match p {
        Some(p) => super::render_predicate(p),
        None => "== 1.0".into(),
    }
}

fn check(p: Option<&Predicate>, measured: f64) -> bool {
    match p {
        Some(p) => p.check(measured),
        None => measured == 1.0,
    }
}

/// Evaluate one constraint against a dataset.
pub fn evaluate_constraint(c: &Constraint, d: &Dataset) -> ConstraintOutcome {
    let scope = Scope::new(d);
    for col in c.referenced_columns() {
        if scope.kind(&col).is_none() {
            return ConstraintOutcome::error(c, EvalError::Schema, format!("unknown column {col:?}"));
        }
    }
    let exprs = c.filter.iter().chain(match &c.verb {
        Verb::Satisfies { expr, .. } => Some(expr),
        _ => None,
    });
    for e in exprs {
        if let Err(m) = type_check(e, &scope) {
            return ConstraintOutcome::error(c, EvalError::Type, m);
        }
    }
    let target = c.columns.first().and_then(|n| scope.columns.get(n.as_str()).copied());
    if c.verb.needs_numeric() {
        let col = target.expect("numeric verbs have one column");
        if !col.kind().is_numeric() {
            return ConstraintOutcome::error(
                c,
                EvalError::Type,
                format!(
                    "{} needs a numeric column, {:?} is {}",
                    c.verb.name(),
                    col.name(),
                    col.kind()
                ),
            );
        }
    }
    let pattern = match &c.verb {
        Verb::HasPattern(p) => match Regex::new(&format!("^(?:{p})$")) {
            Ok(re) => Some(re),
            Err(e) => return ConstraintOutcome::error(c, EvalError::Pattern, format!("invalid pattern: {e}")),
        },
        _ => None,
    };

    let rows = filtered_rows(c.filter.as_ref(), d);
    let measured = measure(c, &scope, target, &rows, pattern.as_ref());
    let pred = c.predicate.as_ref();
    let (status, message) = match measured {
        None => (Status::Pass, "no rows to check".to_string()),
        Some(m) if check(pred, m) => (
            Status::Pass,
            format!("{} = {m} satisfies {}", c.verb.name(), describe_predicate(pred)),
        ),
        Some(m) => (
            Status::Fail,
            format!("{} = {m} violates {}", c.verb.name(), describe_predicate(pred)),
        ),
    };
    ConstraintOutcome {
        constraint_id: c.id.clone(),
        status,
        measured,
        message,
        error: None,
    }
}

fn measure(
    c: &Constraint,
    scope: &Scope,
    target: Option<&ColumnVector>,
    rows: &[usize],
    pattern: Option<&Regex>,
) -> Option<f64> {
    if let Verb::HasSize = c.verb {
        return Some(rows.len() as f64);
    }
    if rows.is_empty() {
        return None;
    }
    if let Verb::Satisfies { expr, .. } = &c.verb {
        let hits = rows.iter().filter(|&&r| eval_row(expr, scope, r) == Some(true)).count();
        return Some(hits as f64 / rows.len() as f64);
    }
    let col = target.expect("single-column verb");
    let values: Vec<&Value> = rows
        .iter()
        .map(|&r| &col.values()[r])
        .filter(|v| !v.is_null())
        .collect();
    if matches!(c.verb, Verb::HasCompleteness | Verb::IsComplete) {
        return Some(values.len() as f64 / rows.len() as f64);
    }
    if values.is_empty() {
        return None;
    }
    let numbers = || values.iter().filter_map(|v| v.as_f64()).collect::<Vec<f64>>();
    let ratio = |hits: usize| hits as f64 / values.len() as f64;
    Some(match &c.verb {
        Verb::IsUnique => {
            let distinct: HashSet<Key> = values.iter().filter_map(|v| key(v)).collect();
            ratio(distinct.len())
        }
        Verb::HasMin => min_max(&numbers())?.0,
        Verb::HasMax => min_max(&numbers())?.1,
        Verb::HasMean => population_moments(&numbers())?.0,
        Verb::HasStandardDeviation => population_moments(&numbers())?.1,
        Verb::HasApproxCountDistinct => {
            let mut s = DistinctSketch::new(DistinctSketch::DEFAULT_PRECISION, DEFAULT_SKETCH_SEED);
            for v in &values {
                s.insert_value(v);
            }
            s.estimate()
        }
        Verb::HasApproxQuantile(q) => {
            let mut s = QuantileSketch::new(QuantileSketch::DEFAULT_K, DEFAULT_SKETCH_SEED);
            for x in numbers() {
                s.insert(x);
            }
            s.query(*q)?
        }
        Verb::IsContainedIn(set) => ratio(values.iter().filter(|v| contained(v, set)).count()),
        Verb::HasPattern(_) => {
            let re = pattern.expect("pattern compiled");
            ratio(values.iter().filter(|v| re.is_match(&v.to_cell())).count())
        }
        Verb::HasCompleteness | Verb::IsComplete | Verb::HasSize | Verb::Satisfies { .. } => {
            unreachable!("handled above")
        }
    })
}

/// Evaluate every constraint (no short-circuit). The test rejects iff some
/// constraint fails; error outcomes are reported but do not reject.
pub fn evaluate_test(t: &DataUnitTest, d: &Dataset) -> TestReport {
    let outcomes: Vec<ConstraintOutcome> = t.constraints.iter().map(|c| evaluate_constraint(c, d)).collect();
    let verdict = if outcomes.iter().any(|o| o.status == Status::Fail) {
        Verdict::Reject
    } else {
        Verdict::Pass
    };
    TestReport {
        test_id: t.id.clone(),
        batch_id: String::new(),
        outcomes,
        verdict,
    }
}

pub fn evaluate_batch(t: &DataUnitTest, batch: &Batch) -> TestReport {
    let mut report = evaluate_test(t, &batch.data);
    report.batch_id = batch.id.clone();
    report
}

/// Keep a constraint only if it evaluates cleanly and holds on the sample.
pub fn precheck_constraint(c: &Constraint, sample: &Dataset) -> Precheck {
    let out = evaluate_constraint(c, sample);
    match out.status {
        Status::Pass => Precheck::Accept,
        Status::Fail => Precheck::Discard("fails_on_sample".into()),
        Status::Error => Precheck::Discard(out.error.map_or("error", EvalError::as_str).to_string()),
    }
}
