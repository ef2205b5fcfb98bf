//! Random datasets and constraints over them.

use proptest::prelude::*;
use taskcheck::dsl::{CmpOp, Constraint, Literal, Operand, Predicate, RowExpr, Verb};
use taskcheck::tabular::{Dataset, Value, ValueKind};

pub type Schema = Vec<(String, ValueKind)>;

const WORDS: [&str; 6] = ["a", "b", "ab", "x@y", "A1", "zz"];
const PATTERNS: [&str; 6] = ["a.*", "[a-z]+", "x@y", "\\d+", "(", ".*"];

pub fn kind() -> impl Strategy<Value = ValueKind> {
    prop_oneof![
        Just(ValueKind::Integer),
        Just(ValueKind::Real),
        Just(ValueKind::Text),
        Just(ValueKind::Boolean),
    ]
}

fn present(kind: ValueKind) -> BoxedStrategy<Value> {
    match kind {
        ValueKind::Integer => (-5i64..20).prop_map(Value::Integer).boxed(),
        // Half steps keep sums exact enough to hit boundaries; never -0.0.
        ValueKind::Real => (-10i32..20).prop_map(|k| Value::Real(k as f64 * 0.5 + 0.0)).boxed(),
        ValueKind::Text => proptest::sample::select(&WORDS[..])
            .prop_map(|s| Value::Text(s.into()))
            .boxed(),
        ValueKind::Boolean => any::<bool>().prop_map(Value::Boolean).boxed(),
    }
}

pub fn value(kind: ValueKind, null_weight: u32) -> BoxedStrategy<Value> {
    prop_oneof![null_weight => Just(Value::Null), 10 => present(kind)].boxed()
}

pub fn literal(kind: ValueKind) -> BoxedStrategy<Literal> {
    present(kind)
        .prop_map(|v| match v {
            Value::Integer(i) => Literal::Integer(i),
            Value::Real(r) => Literal::Real(r),
            Value::Text(s) => Literal::Text(s),
            Value::Boolean(b) => Literal::Boolean(b),
            Value::Null => unreachable!(),
        })
        .boxed()
}

/// Columns `c0..` of random kinds, up to `max_rows` rows.
pub fn dataset(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Dataset> {
    (prop::collection::vec(kind(), 1..=max_cols), 0..=max_rows, 0u32..4).prop_flat_map(|(kinds, rows, nulls)| {
        let row = kinds.iter().map(|k| value(*k, nulls)).collect::<Vec<_>>();
        prop::collection::vec(row, rows).prop_map(move |cells| {
            let schema: Vec<(String, ValueKind)> =
                kinds.iter().enumerate().map(|(i, k)| (format!("c{i}"), *k)).collect();
            let refs: Vec<(&str, ValueKind)> = schema.iter().map(|(n, k)| (n.as_str(), *k)).collect();
            Dataset::from_rows(&refs, cells).expect("well-formed rows")
        })
    })
}

pub fn schema_of(d: &Dataset) -> Schema {
    d.columns().iter().map(|c| (c.name().to_owned(), c.kind())).collect()
}

fn column(schema: &Schema) -> BoxedStrategy<(String, ValueKind)> {
    let known = proptest::sample::select(schema.clone());
    prop_oneof![
        19 => known,
        1 => Just(("missing".to_owned(), ValueKind::Integer)),
    ]
    .boxed()
}

fn op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![
        Just(CmpOp::Eq),
        Just(CmpOp::Ne),
        Just(CmpOp::Lt),
        Just(CmpOp::Le),
        Just(CmpOp::Gt),
        Just(CmpOp::Ge),
    ]
}

fn metric_op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![
        Just(CmpOp::Eq),
        Just(CmpOp::Lt),
        Just(CmpOp::Le),
        Just(CmpOp::Gt),
        Just(CmpOp::Ge),
    ]
}

fn predicate(thresholds: Vec<f64>) -> BoxedStrategy<Option<Predicate>> {
    let t = proptest::sample::select(thresholds);
    prop_oneof![
        1 => Just(None),
        4 => (metric_op(), t.clone()).prop_map(|(o, x)| Some(Predicate::Compare(o, x))),
        1 => (t.clone(), t.clone()).prop_map(|(a, b)| Some(Predicate::Between(a.min(b), a.max(b)))),
        1 => prop::collection::vec(t, 1..4).prop_map(|v| Some(Predicate::In(v))),
    ]
    .boxed()
}

fn required(thresholds: Vec<f64>) -> BoxedStrategy<Option<Predicate>> {
    predicate(thresholds)
        .prop_filter("needs a predicate", Option::is_some)
        .boxed()
}

fn ratios() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 0.8, 1.0]
}

fn magnitudes() -> Vec<f64> {
    (-10..=20).map(|k| k as f64 * 0.5).collect()
}

fn counts() -> Vec<f64> {
    (0..=50).map(|k| k as f64).collect()
}

/// Row expressions over the schema, occasionally mistyped.
pub fn row_expr(schema: &Schema, depth: u32) -> BoxedStrategy<RowExpr> {
    let s = schema.clone();
    let atom = prop_oneof![
        1 => any::<bool>().prop_map(RowExpr::Const),
        3 => (proptest::sample::select(s.clone()), any::<bool>())
            .prop_map(|((c, _), negated)| RowExpr::IsNull { column: c, negated }),
        8 => (proptest::sample::select(s.clone()), op(), prop::bool::weighted(0.9))
            .prop_flat_map(|((c, k), o, typed)| {
                let lk = if typed { Just(k).boxed() } else { kind().boxed() };
                (Just(c), Just(o), lk.prop_flat_map(literal))
            })
            .prop_map(|(c, o, l)| RowExpr::compare(&c, o, l)),
        2 => (proptest::sample::select(s.clone()), op(), proptest::sample::select(s))
            .prop_map(|((a, _), o, (b, _))| RowExpr::Compare {
                left: Operand::Column(a),
                op: o,
                right: Operand::Column(b),
            }),
    ];
    atom.prop_recursive(depth, 8, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(RowExpr::negate),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.and(b)),
            (inner.clone(), inner).prop_map(|(a, b)| a.or(b)),
        ]
    })
    .boxed()
}

fn verb_and_predicate(schema: &Schema, col: (String, ValueKind)) -> BoxedStrategy<(Verb, Option<Predicate>)> {
    let (_, k) = col;
    let set = prop_oneof![
        9 => prop::collection::vec(literal(k), 1..5),
        1 => kind().prop_flat_map(|k2| prop::collection::vec(literal(k2), 1..3)),
    ];
    let quantiles = proptest::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.9, 1.0]);
    let pattern = proptest::sample::select(&PATTERNS[..]);
    prop_oneof![
        (Just(Verb::HasCompleteness), required(ratios())),
        (Just(Verb::IsComplete), Just(None)),
        (Just(Verb::IsUnique), Just(None)),
        (Just(Verb::HasMin), required(magnitudes())),
        (Just(Verb::HasMax), required(magnitudes())),
        (Just(Verb::HasMean), required(magnitudes())),
        (
            Just(Verb::HasStandardDeviation),
            required(vec![0.0, 0.5, 1.0, 2.0, 5.0])
        ),
        (Just(Verb::HasApproxCountDistinct), required(counts())),
        (quantiles.prop_map(Verb::HasApproxQuantile), required(magnitudes())),
        (set.prop_map(Verb::IsContainedIn), predicate(ratios())),
        (pattern.prop_map(|p| Verb::HasPattern(p.into())), predicate(ratios())),
        (Just(Verb::HasSize), required(counts())),
        (
            row_expr(schema, 2).prop_filter("satisfies reads a column", |e| !e.columns().is_empty()),
            predicate(ratios())
        )
            .prop_map(|(expr, p)| (
                Verb::Satisfies {
                    expr,
                    name: "rule".into()
                },
                p
            )),
    ]
    .boxed()
}

/// One constraint over `schema`, with a filter about half the time.
pub fn constraint(schema: &Schema) -> BoxedStrategy<Constraint> {
    let s = schema.clone();
    (column(schema), prop::option::of(row_expr(schema, 2)))
        .prop_flat_map(move |(col, filter)| (Just(col.0.clone()), verb_and_predicate(&s, col), Just(filter)))
        .prop_map(|(name, (verb, pred), filter)| {
            let mut c = Constraint::new(verb, &name, pred).with_id("c1");
            c.filter = filter;
            c
        })
        .boxed()
}

/// Constraint with a guaranteed filter, for restriction checks.
pub fn conditional_constraint(schema: &Schema) -> BoxedStrategy<Constraint> {
    (constraint(schema), row_expr(schema, 2))
        .prop_map(|(c, f)| c.with_filter(f))
        .boxed()
}

pub fn dataset_and_constraint(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Dataset, Constraint)> {
    dataset(max_rows, max_cols).prop_flat_map(|d| {
        let c = constraint(&schema_of(&d));
        (Just(d), c)
    })
}

pub fn dataset_and_conditional(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Dataset, Constraint)> {
    dataset(max_rows, max_cols).prop_flat_map(|d| {
        let c = conditional_constraint(&schema_of(&d));
        (Just(d), c)
    })
}
