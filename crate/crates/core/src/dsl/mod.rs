//! The constraint language: data unit tests as lists of declarative,
//! aggregate constraints.
//!
//! A constraint names a verb, its target column(s), a predicate over the
//! verb's metric and an optional row filter:
//!
//! ```text
//! hasCompleteness("email", >= 0.99).where(status == "COMPLETED")
//! satisfies(status != "COMPLETED" or email is not null, "completed_has_email", >= 1.0)
//! ```
//!
//! [`parse_constraint`] and [`render_constraint`] are inverse on the AST.
//! The full grammar is [`GRAMMAR`].

mod eval;
mod parser;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub(crate) use eval::filtered_rows;
pub use eval::{
    evaluate_batch, evaluate_constraint, evaluate_test, precheck_constraint, ConstraintOutcome, EvalError, Precheck,
    Status, TestReport, Verdict,
};
pub use parser::{parse_constraint, parse_row_expr, ParseError, ParseErrorKind};

use crate::error::{Error, Result};

pub const GRAMMAR: &str = include_str!("grammar.ebnf");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

/// Threshold applied to a constraint's metric.
#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    /// `>=`, `<=`, `==`, `>` or `<` against a number (`!=` is not allowed).
    Compare(CmpOp, f64),
    Between(f64, f64),
    In(Vec<f64>),
}

impl Predicate {
    pub fn at_least(t: f64) -> Self {
        Predicate::Compare(CmpOp::Ge, t)
    }

    pub fn at_most(t: f64) -> Self {
        Predicate::Compare(CmpOp::Le, t)
    }

    pub fn check(&self, measured: f64) -> bool {
        match self {
            Predicate::Compare(op, t) => measured.partial_cmp(t).is_some_and(|ord| op.holds(ord)),
            Predicate::Between(lo, hi) => *lo <= measured && measured <= *hi,
            Predicate::In(set) => set.contains(&measured),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    Integer(i64),
    Real(f64),
    Text(String),
    Boolean(bool),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Operand {
    Column(String),
    Literal(Literal),
}

/// Row-level boolean expression used by `.where(..)` and `satisfies(..)`.
#[derive(Clone, Debug, PartialEq)]
pub enum RowExpr {
    Const(bool),
    Compare { left: Operand, op: CmpOp, right: Operand },
    IsNull { column: String, negated: bool },
    Not(Box<RowExpr>),
    And(Box<RowExpr>, Box<RowExpr>),
    Or(Box<RowExpr>, Box<RowExpr>),
}

impl RowExpr {
    pub fn compare(column: &str, op: CmpOp, lit: Literal) -> Self {
        RowExpr::Compare {
            left: Operand::Column(column.to_owned()),
            op,
            right: Operand::Literal(lit),
        }
    }

    pub fn and(self, other: RowExpr) -> Self {
        RowExpr::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: RowExpr) -> Self {
        RowExpr::Or(Box::new(self), Box::new(other))
    }

    pub fn negate(self) -> Self {
        RowExpr::Not(Box::new(self))
    }

    /// Referenced column names, sorted and deduplicated.
    pub fn columns(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        self.collect_columns(&mut out);
        out.into_iter().collect()
    }

    fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match self {
            RowExpr::Const(_) => {}
            RowExpr::Compare { left, right, .. } => {
                for o in [left, right] {
                    if let Operand::Column(c) = o {
                        out.insert(c.clone());
                    }
                }
            }
            RowExpr::IsNull { column, .. } => {
                out.insert(column.clone());
            }
            RowExpr::Not(e) => e.collect_columns(out),
            RowExpr::And(a, b) | RowExpr::Or(a, b) => {
                a.collect_columns(out);
                b.collect_columns(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verb {
    HasCompleteness,
    IsComplete,
    IsUnique,
    HasMin,
    HasMax,
    HasMean,
    HasStandardDeviation,
    HasApproxCountDistinct,
    HasApproxQuantile(f64),
    IsContainedIn(Vec<Literal>),
    HasPattern(String),
    HasSize,
    Satisfies { expr: RowExpr, name: String },
}

impl Verb {
    pub fn name(&self) -> &'static str {
        match self {
            Verb::HasCompleteness => "hasCompleteness",
            Verb::IsComplete => "isComplete",
            Verb::IsUnique => "isUnique",
            Verb::HasMin => "hasMin",
            Verb::HasMax => "hasMax",
            Verb::HasMean => "hasMean",
            Verb::HasStandardDeviation => "hasStandardDeviation",
            Verb::HasApproxCountDistinct => "hasApproxCountDistinct",
            Verb::HasApproxQuantile(_) => "hasApproxQuantile",
            Verb::IsContainedIn(_) => "isContainedIn",
            Verb::HasPattern(_) => "hasPattern",
            Verb::HasSize => "hasSize",
            Verb::Satisfies { .. } => "satisfies",
        }
    }

    /// Verbs whose metric comes from a sketch rather than an exact scan.
    pub fn is_sketched(&self) -> bool {
        matches!(self, Verb::HasApproxCountDistinct | Verb::HasApproxQuantile(_))
    }

    pub fn needs_numeric(&self) -> bool {
        matches!(
            self,
            Verb::HasMin | Verb::HasMax | Verb::HasMean | Verb::HasStandardDeviation | Verb::HasApproxQuantile(_)
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub id: String,
    pub verb: Verb,
    /// Target columns: none for `hasSize`, the referenced columns of the
    /// expression for `satisfies`, exactly one otherwise.
    pub columns: Vec<String>,
    /// `None` means the verb's default (ratio == 1.0) or, for `isComplete`
    /// and `isUnique`, the implied ratio of 1.0.
    pub predicate: Option<Predicate>,
    pub filter: Option<RowExpr>,
    pub assumption_ids: Vec<String>,
}

impl Constraint {
    pub fn new(verb: Verb, column: &str, predicate: Option<Predicate>) -> Self {
        let columns = match &verb {
            Verb::HasSize => Vec::new(),
            Verb::Satisfies { expr, .. } => expr.columns(),
            _ => vec![column.to_owned()],
        };
        Self {
            id: String::new(),
            verb,
            columns,
            predicate,
            filter: None,
            assumption_ids: Vec::new(),
        }
    }

    pub fn satisfies(expr: RowExpr, name: &str, predicate: Option<Predicate>) -> Self {
        Self::new(
            Verb::Satisfies {
                expr,
                name: name.to_owned(),
            },
            "",
            predicate,
        )
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_filter(mut self, filter: RowExpr) -> Self {
        self.filter = Some(filter);
        self
    }

    pub fn with_assumptions(mut self, ids: Vec<String>) -> Self {
        self.assumption_ids = ids;
        self
    }

    /// Every column the constraint reads: targets plus filter columns.
    pub fn referenced_columns(&self) -> Vec<String> {
        let mut all: BTreeSet<String> = self.columns.iter().cloned().collect();
        if let Some(f) = &self.filter {
            all.extend(f.columns());
        }
        all.into_iter().collect()
    }

    /// Same surface form, ignoring id and provenance.
    pub fn same_rule(&self, other: &Constraint) -> bool {
        self.verb == other.verb
            && self.columns == other.columns
            && self.predicate == other.predicate
            && self.filter == other.filter
    }

    pub fn render(&self) -> String {
        render_constraint(self)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_constraint(self))
    }
}

pub fn render_constraint(c: &Constraint) -> String {
    let mut out = String::new();
    out.push_str(c.verb.name());
    out.push('(');
    let mut args: Vec<String> = Vec::new();
    match &c.verb {
        Verb::HasSize => {}
        Verb::Satisfies { expr, name } => {
            args.push(render_row_expr(expr));
            args.push(quote(name));
        }
        verb => {
            args.push(quote(c.columns.first().map_or("", String::as_str)));
            match verb {
                Verb::HasApproxQuantile(q) => args.push(number(*q)),
                Verb::IsContainedIn(set) => args.push(format!(
                    "[{}]",
                    set.iter().map(render_literal).collect::<Vec<_>>().join(", ")
                )),
                Verb::HasPattern(p) => args.push(quote(p)),
                _ => {}
            }
        }
    }
    if let Some(p) = &c.predicate {
        args.push(render_predicate(p));
    }
    out.push_str(&args.join(", "));
    out.push(')');
    if let Some(filter) = &c.filter {
        out.push_str(".where(");
        out.push_str(&render_row_expr(filter));
        out.push(')');
    }
    out
}

pub fn render_predicate(p: &Predicate) -> String {
    match p {
        Predicate::Compare(op, t) => format!("{} {}", op.symbol(), number(*t)),
        Predicate::Between(lo, hi) => format!("between({}, {})", number(*lo), number(*hi)),
        Predicate::In(set) => format!("in({})", set.iter().map(|v| number(*v)).collect::<Vec<_>>().join(", ")),
    }
}

pub fn render_row_expr(e: &RowExpr) -> String {
    match e {
        RowExpr::Const(b) => b.to_string(),
        RowExpr::Compare { left, op, right } => {
            format!("{} {} {}", render_operand(left), op.symbol(), render_operand(right))
        }
        RowExpr::IsNull { column, negated } => {
            format!("{} is {}null", column_ref(column), if *negated { "not " } else { "" })
        }
        RowExpr::Not(inner) => {
            let s = render_row_expr(inner);
            match **inner {
                RowExpr::And(..) | RowExpr::Or(..) => format!("not ({s})"),
                _ => format!("not {s}"),
            }
        }
        RowExpr::And(a, b) => {
            let l = wrap_if(a, |e| matches!(e, RowExpr::Or(..)));
            let r = wrap_if(b, |e| matches!(e, RowExpr::Or(..) | RowExpr::And(..)));
            format!("{l} and {r}")
        }
        RowExpr::Or(a, b) => {
            let l = render_row_expr(a);
            let r = wrap_if(b, |e| matches!(e, RowExpr::Or(..)));
            format!("{l} or {r}")
        }
    }
}

fn wrap_if(e: &RowExpr, needs: impl Fn(&RowExpr) -> bool) -> String {
    let s = render_row_expr(e);
    if needs(e) {
        format!("({s})")
    } else {
        s
    }
}

fn render_operand(o: &Operand) -> String {
    match o {
        Operand::Column(c) => column_ref(c),
        Operand::Literal(l) => render_literal(l),
    }
}

pub fn render_literal(l: &Literal) -> String {
    match l {
        Literal::Integer(i) => i.to_string(),
        Literal::Real(r) => format!("{r:?}"),
        Literal::Text(s) => quote(s),
        Literal::Boolean(b) => b.to_string(),
    }
}

fn number(v: f64) -> String {
    format!("{v:?}")
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        if ch == '"' || ch == '\\' {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('"');
    out
}

pub(crate) const KEYWORDS: [&str; 7] = ["and", "or", "not", "is", "null", "true", "false"];

fn column_ref(name: &str) -> String {
    let mut chars = name.chars();
    let plain = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&name);
    if plain {
        name.to_owned()
    } else {
        format!("`{name}`")
    }
}

/// A data unit test: the constraint set generated for one task.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DataUnitTest {
    pub id: String,
    pub task_id: String,
    /// Columns the task reads; a column with no constraints is still listed.
    pub accessed_columns: Vec<String>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub assumption_ids: Vec<String>,
}

/// On-disk form: `tests/<task_id>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestArtifact {
    pub id: String,
    pub task_id: String,
    #[serde(default)]
    pub accessed_columns: Vec<String>,
    pub constraints: Vec<ConstraintEntry>,
}

impl DataUnitTest {
    pub fn new(id: impl Into<String>, task_id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            task_id: task_id.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, c: Constraint) -> Result<()> {
        if self.constraints.iter().any(|x| x.id == c.id) {
            return Err(Error::Schema(format!("duplicate constraint id {:?}", c.id)));
        }
        self.constraints.push(c);
        Ok(())
    }

    pub fn constraint(&self, id: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.id == id)
    }

    /// Constraints whose targets include `column`.
    pub fn constraints_on<'a>(&'a self, column: &'a str) -> impl Iterator<Item = &'a Constraint> {
        self.constraints
            .iter()
            .filter(move |c| c.columns.iter().any(|x| x == column))
    }

    pub fn to_artifact(&self) -> TestArtifact {
        TestArtifact {
            id: self.id.clone(),
            task_id: self.task_id.clone(),
            accessed_columns: self.accessed_columns.clone(),
            constraints: self
                .constraints
                .iter()
                .map(|c| ConstraintEntry {
                    id: c.id.clone(),
                    text: render_constraint(c),
                    assumption_ids: c.assumption_ids.clone(),
                })
                .collect(),
        }
    }

    pub fn from_artifact(a: TestArtifact) -> Result<Self> {
        let mut t = DataUnitTest::new(a.id, a.task_id);
        t.accessed_columns = a.accessed_columns;
        for entry in a.constraints {
            let c = parse_constraint(&entry.text)?
                .with_id(entry.id)
                .with_assumptions(entry.assumption_ids);
            t.push(c)?;
        }
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_artifact()).expect("test artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_artifact(serde_json::from_str(text)?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.json", self.task_id));
        fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(text: &str) {
        let c = parse_constraint(text).unwrap();
        let rendered = render_constraint(&c);
        assert_eq!(parse_constraint(&rendered).unwrap(), c, "{rendered}");
    }

    #[test]
    fn spec_examples_round_trip() {
        round_trip(r#"hasCompleteness("email", >= 0.99)"#);
        round_trip(r#"hasCompleteness("colA", >= 0.99).where(colB > 10)"#);
        round_trip(r#"satisfies(status != "COMPLETED" or email is not null, "completed_has_email", >= 1.0)"#);
        round_trip(r#"hasMin("x", between(-1.5, 2))"#);
        round_trip(r#"isContainedIn("loc", ["US", "DE", 3, true])"#);
        round_trip(r#"hasPattern("code", "[A-Z]{2}\d+", >= 0.9)"#);
        round_trip(r#"hasApproxQuantile("x", 0.5, in(1, 2, 3))"#);
    }

    #[test]
    fn between_bounds_survive() {
        let c = parse_constraint(r#"hasMean("x", between(1.25, 7))"#).unwrap();
        let again = parse_constraint(&c.render()).unwrap();
        assert_eq!(again.predicate, Some(Predicate::Between(1.25, 7.0)));
    }

    #[test]
    fn precedence_is_parenthesised() {
        let a = RowExpr::compare("a", CmpOp::Gt, Literal::Integer(1));
        let b = RowExpr::IsNull {
            column: "b".into(),
            negated: false,
        };
        let c = RowExpr::Const(true);
        let e = a.clone().and(b.clone().or(c.clone()));
        assert_eq!(render_row_expr(&e), "a > 1 and (b is null or true)");
        let right_nested = a.clone().or(b.clone().or(c.clone()));
        assert_eq!(render_row_expr(&right_nested), "a > 1 or (b is null or true)");
        let not_and = a.and(b).negate();
        assert_eq!(render_row_expr(&not_and), "not (a > 1 and b is null)");
    }

    #[test]
    fn odd_column_names_are_backticked() {
        let e = RowExpr::IsNull {
            column: "guest cat".into(),
            negated: true,
        };
        assert_eq!(render_row_expr(&e), "`guest cat` is not null");
        let kw = RowExpr::IsNull {
            column: "null".into(),
            negated: false,
        };
        assert_eq!(parse_row_expr(&render_row_expr(&kw)).unwrap(), kw);
    }

    #[test]
    fn artifact_round_trip() {
        let mut t = DataUnitTest::new("t1-test", "t1");
        t.accessed_columns = vec!["email".into()];
        t.push(
            parse_constraint(r#"isComplete("email")"#)
                .unwrap()
                .with_id("c1")
                .with_assumptions(vec!["a1".into()]),
        )
        .unwrap();
        let back = DataUnitTest::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut t = DataUnitTest::new("x", "x");
        let c = parse_constraint(r#"isComplete("a")"#).unwrap().with_id("c1");
        t.push(c.clone()).unwrap();
        assert!(t.push(c).is_err());
    }

    #[test]
    fn grammar_mentions_every_verb() {
        for verb in [
            "hasCompleteness",
            "isComplete",
            "isUnique",
            "hasMin",
            "hasMax",
            "hasMean",
            "hasStandardDeviation",
            "hasApproxCountDistinct",
            "hasApproxQuantile",
            "isContainedIn",
            "hasPattern",
            "hasSize",
            "satisfies",
        ] {
            assert!(GRAMMAR.contains(&format!("\"{verb}\"")), "{verb}");
        }
    }
}
