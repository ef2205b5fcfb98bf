//! A deliberately plain constraint evaluator: row-at-a-time, sorted scans,
//! exact counts. Sketched verbs are answered exactly, which the sketches
//! match below their exact limits.

use std::cmp::Ordering;

use regex::Regex;
use taskcheck::dsl::{CmpOp, Constraint, Literal, Operand, Predicate, RowExpr, Status, Verb};
use taskcheck::tabular::{Dataset, Value, ValueKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RefOutcome {
    pub status: Status,
    pub measured: Option<f64>,
}

impl RefOutcome {
    fn error() -> Self {
        Self {
            status: Status::Error,
            measured: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tri {
    True,
    False,
    Unknown,
}

fn cell<'a>(d: &'a Dataset, name: &str, row: usize) -> &'a Value {
    &d.column(name).expect("checked").values()[row]
}

fn lit(l: &Literal) -> Value {
    match l {
        Literal::Integer(i) => Value::Integer(*i),
        Literal::Real(r) => Value::Real(*r),
        Literal::Text(s) => Value::Text(s.clone()),
        Literal::Boolean(b) => Value::Boolean(*b),
    }
}

fn numeric(k: ValueKind) -> bool {
    matches!(k, ValueKind::Integer | ValueKind::Real)
}

fn same_family(a: ValueKind, b: ValueKind) -> bool {
    a == b || (numeric(a) && numeric(b))
}

fn operand_kind(d: &Dataset, o: &Operand) -> ValueKind {
    match o {
        Operand::Column(c) => d.column(c).expect("checked").kind(),
        Operand::Literal(l) => match l {
            Literal::Integer(_) => ValueKind::Integer,
            Literal::Real(_) => ValueKind::Real,
            Literal::Text(_) => ValueKind::Text,
            Literal::Boolean(_) => ValueKind::Boolean,
        },
    }
}

fn well_typed(d: &Dataset, e: &RowExpr) -> bool {
    match e {
        RowExpr::Const(_) | RowExpr::IsNull { .. } => true,
        RowExpr::Compare { left, right, .. } => same_family(operand_kind(d, left), operand_kind(d, right)),
        RowExpr::Not(x) => well_typed(d, x),
        RowExpr::And(a, b) | RowExpr::Or(a, b) => well_typed(d, a) && well_typed(d, b),
    }
}

fn cmp_values(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Text(x), Value::Text(y)) => Some(x.as_str().cmp(y.as_str())),
        (Value::Boolean(x), Value::Boolean(y)) => Some((*x as u8).cmp(&(*y as u8))),
        (Value::Integer(x), Value::Integer(y)) => Some(x.cmp(y)),
        (Value::Integer(x), Value::Real(y)) => (*x as f64).partial_cmp(y),
        (Value::Real(x), Value::Integer(y)) => x.partial_cmp(&(*y as f64)),
        (Value::Real(x), Value::Real(y)) => x.partial_cmp(y),
        _ => None,
    }
}

fn holds(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord.is_eq(),
        CmpOp::Ne => ord.is_ne(),
        CmpOp::Lt => ord.is_lt(),
        CmpOp::Le => ord.is_le(),
        CmpOp::Gt => ord.is_gt(),
        CmpOp::Ge => ord.is_ge(),
    }
}

fn truth(d: &Dataset, e: &RowExpr, row: usize) -> Tri {
    match e {
        RowExpr::Const(true) => Tri::True,
        RowExpr::Const(false) => Tri::False,
        RowExpr::IsNull { column, negated } => {
            if cell(d, column, row).is_null() ^ negated {
                Tri::True
            } else {
                Tri::False
            }
        }
        RowExpr::Compare { left, op, right } => {
            let get = |o: &Operand| match o {
                Operand::Column(c) => cell(d, c, row).clone(),
                Operand::Literal(l) => lit(l),
            };
            let (a, b) = (get(left), get(right));
            if a.is_null() || b.is_null() {
                return Tri::Unknown;
            }
            match cmp_values(&a, &b) {
                Some(ord) if holds(*op, ord) => Tri::True,
                Some(_) => Tri::False,
                None => Tri::Unknown,
            }
        }
        RowExpr::Not(x) => match truth(d, x, row) {
            Tri::True => Tri::False,
            Tri::False => Tri::True,
            Tri::Unknown => Tri::Unknown,
        },
        RowExpr::And(a, b) => {
            let (x, y) = (truth(d, a, row), truth(d, b, row));
            if x == Tri::False || y == Tri::False {
                Tri::False
            } else if x == Tri::True && y == Tri::True {
                Tri::True
            } else {
                Tri::Unknown
            }
        }
        RowExpr::Or(a, b) => {
            let (x, y) = (truth(d, a, row), truth(d, b, row));
            if x == Tri::True || y == Tri::True {
                Tri::True
            } else if x == Tri::False && y == Tri::False {
                Tri::False
            } else {
                Tri::Unknown
            }
        }
    }
}

/// Rows where `filter` is definitely true.
pub fn rows_where(d: &Dataset, filter: Option<&RowExpr>) -> Vec<usize> {
    (0..d.row_count())
        .filter(|&r| filter.is_none_or(|f| truth(d, f, r) == Tri::True))
        .collect()
}

fn same_value(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Real(x), Value::Real(y)) => x == y || x.to_bits() == y.to_bits(),
        _ => a == b,
    }
}

fn distinct_count(values: &[&Value]) -> usize {
    let mut seen: Vec<&Value> = Vec::new();
    for v in values {
        if !seen.iter().any(|s| same_value(s, v)) {
            seen.push(v);
        }
    }
    seen.len()
}

/// Mean and population deviation, shifted by the first value.
pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mut shift = 0.0;
    for x in xs {
        shift += x - xs[0];
    }
    let mean = xs[0] + shift / n;
    let mut ss = 0.0;
    for x in xs {
        ss += (x - mean) * (x - mean);
    }
    (mean, (ss / n).sqrt())
}

/// Nearest-rank quantile: the smallest value whose rank reaches `ceil(q n)`.
pub fn nearest_rank(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if q <= 0.0 {
        return v[0];
    }
    if q >= 1.0 {
        return v[v.len() - 1];
    }
    let rank = ((q * v.len() as f64).ceil() as usize).max(1);
    v[rank - 1]
}

fn passes(p: Option<&Predicate>, m: f64) -> bool {
    match p {
        None => m == 1.0,
        Some(Predicate::Compare(op, t)) => m.partial_cmp(t).is_some_and(|o| holds(*op, o)),
        Some(Predicate::Between(lo, hi)) => *lo <= m && m <= *hi,
        Some(Predicate::In(set)) => set.contains(&m),
    }
}

pub fn evaluate(c: &Constraint, d: &Dataset) -> RefOutcome {
    let mut names: Vec<&String> = c.columns.iter().collect();
    let filter_cols = c.filter.as_ref().map(RowExpr::columns).unwrap_or_default();
    names.extend(filter_cols.iter());
    if names.iter().any(|n| d.column(n).is_none()) {
        return RefOutcome::error();
    }
    let mut exprs: Vec<&RowExpr> = c.filter.iter().collect();
    if let Verb::Satisfies { expr, .. } = &c.verb {
        exprs.push(expr);
    }
    if exprs.iter().any(|e| !well_typed(d, e)) {
        return RefOutcome::error();
    }
    let target = c.columns.first().and_then(|n| d.column(n));
    let wants_numbers = matches!(
        c.verb,
        Verb::HasMin | Verb::HasMax | Verb::HasMean | Verb::HasStandardDeviation | Verb::HasApproxQuantile(_)
    );
    if wants_numbers && !numeric(target.expect("one column").kind()) {
        return RefOutcome::error();
    }
    let pattern = match &c.verb {
        Verb::HasPattern(p) => match Regex::new(&format!("^(?:{p})$")) {
            Ok(re) => Some(re),
            Err(_) => return RefOutcome::error(),
        },
        _ => None,
    };

    let rows = rows_where(d, c.filter.as_ref());
    let measured = measure(c, d, &rows, pattern.as_ref());
    let status = match measured {
        Some(m) if !passes(c.predicate.as_ref(), m) => Status::Fail,
        _ => Status::Pass,
    };
    RefOutcome { status, measured }
}

fn measure(c: &Constraint, d: &Dataset, rows: &[usize], pattern: Option<&Regex>) -> Option<f64> {
    if c.verb == Verb::HasSize {
        return Some(rows.len() as f64);
    }
    if rows.is_empty() {
        return None;
    }
    if let Verb::Satisfies { expr, .. } = &c.verb {
        let yes = rows.iter().filter(|&&r| truth(d, expr, r) == Tri::True).count();
        return Some(yes as f64 / rows.len() as f64);
    }
    let name = &c.columns[0];
    let present: Vec<&Value> = rows
        .iter()
        .map(|&r| cell(d, name, r))
        .filter(|v| !v.is_null())
        .collect();
    if matches!(c.verb, Verb::HasCompleteness | Verb::IsComplete) {
        return Some(present.len() as f64 / rows.len() as f64);
    }
    if present.is_empty() {
        return None;
    }
    let n = present.len() as f64;
    let xs: Vec<f64> = present.iter().filter_map(|v| v.as_f64()).collect();
    Some(match &c.verb {
        Verb::IsUnique => distinct_count(&present) as f64 / n,
        Verb::HasApproxCountDistinct => distinct_count(&present) as f64,
        Verb::HasMin => xs.iter().copied().fold(xs[0], f64::min),
        Verb::HasMax => xs.iter().copied().fold(xs[0], f64::max),
        Verb::HasMean => moments(&xs).0,
        Verb::HasStandardDeviation => moments(&xs).1,
        Verb::HasApproxQuantile(q) => nearest_rank(&xs, *q),
        Verb::IsContainedIn(set) => {
            let members = set.iter().map(lit).collect::<Vec<_>>();
            let hits = present
                .iter()
                .filter(|v| members.iter().any(|m| cmp_values(v, m) == Some(Ordering::Equal)))
                .count();
            hits as f64 / n
        }
        Verb::HasPattern(_) => {
            let re = pattern.expect("compiled");
            present.iter().filter(|v| re.is_match(&v.to_cell())).count() as f64 / n
        }
        Verb::HasCompleteness | Verb::IsComplete | Verb::HasSize | Verb::Satisfies { .. } => unreachable!(),
    })
}
