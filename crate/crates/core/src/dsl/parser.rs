use std::fmt;

use super::{CmpOp, Constraint, Literal, Operand, Predicate, RowExpr, Verb, KEYWORDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownVerb,
    Arity,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::UnknownVerb => "unknown_verb",
            ParseErrorKind::Arity => "arity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Byte offset into the input.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ParseErrorKind::Syntax => "syntax error",
            ParseErrorKind::UnknownVerb => "unknown verb",
            ParseErrorKind::Arity => "arity mismatch",
        };
        write!(f, "{what} at byte {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for ParseError {}

type PResult<T> = Result<T, ParseError>;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    Str(String),
    Num(String),
    Op(CmpOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Quoted(s) => format!("column `{s}`"),
            Tok::Str(_) => "string".into(),
            Tok::Num(n) => format!("number {n}"),
            Tok::Op(op) => format!("`{}`", op.symbol()),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        kind: ParseErrorKind::Syntax,
        offset,
        message: message.into(),
    }
}

fn lex(src: &str) -> PResult<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'[' => out.push((Tok::LBracket, start)),
            b']' => out.push((Tok::RBracket, start)),
            b',' => out.push((Tok::Comma, start)),
            b'.' => out.push((Tok::Dot, start)),
            b'=' | b'!' | b'<' | b'>' => {
                let next = bytes.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    (b'=', Some(b'=')) => (CmpOp::Eq, 2),
                    (b'!', Some(b'=')) => (CmpOp::Ne, 2),
                    (b'<', Some(b'=')) => (CmpOp::Le, 2),
                    (b'>', Some(b'=')) => (CmpOp::Ge, 2),
                    (b'<', _) => (CmpOp::Lt, 1),
                    (b'>', _) => (CmpOp::Gt, 1),
                    _ => return Err(syntax(start, format!("unexpected `{}`", c as char))),
                };
                out.push((Tok::Op(op), start));
                i += len;
                continue;
            }
            b'"' => {
                let (s, end) = lex_string(src, i)?;
                out.push((Tok::Str(s), start));
                i = end;
                continue;
            }
            b'`' => {
                let close = src[i + 1..]
                    .find('`')
                    .ok_or_else(|| syntax(start, "unterminated backtick column"))?;
                let name = &src[i + 1..i + 1 + close];
                if name.is_empty() {
                    return Err(syntax(start, "empty column name"));
                }
                out.push((Tok::Quoted(name.to_owned()), start));
                i += close + 2;
                continue;
            }
            b'-' | b'0'..=b'9' => {
                let end = lex_number(bytes, i).ok_or_else(|| syntax(start, "malformed number"))?;
                out.push((Tok::Num(src[i..end].to_owned()), start));
                i = end;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = i + 1;
                while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                    end += 1;
                }
                out.push((Tok::Ident(src[i..end].to_owned()), start));
                i = end;
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().expect("in bounds");
                return Err(syntax(start, format!("unexpected character {ch:?}")));
            }
        }
        i += 1;
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

fn lex_string(src: &str, start: usize) -> PResult<(String, usize)> {
    let mut out = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((off, ch)) = chars.next() {
        match ch {
            '"' => return Ok((out, start + 1 + off + 1)),
            '\\' => match src[start + 1 + off + 1..].chars().next() {
                Some(next @ ('"' | '\\')) => {
                    out.push(next);
                    chars.next();
                }
                _ => out.push('\\'),
            },
            _ => out.push(ch),
        }
    }
    Err(syntax(start, "unterminated string"))
}

fn lex_number(bytes: &[u8], start: usize) -> Option<usize> {
    let mut i = start;
    if bytes[i] == b'-' {
        i += 1;
    }
    let digits = |i: &mut usize| {
        let from = *i;
        while *i < bytes.len() && bytes[*i].is_ascii_digit() {
            *i += 1;
        }
        *i > from
    };
    if !digits(&mut i) {
        return None;
    }
    if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        i += 1;
        digits(&mut i);
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if !digits(&mut j) {
            return None;
        }
        i = j;
    }
    if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
        return None;
    }
    Some(i)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> PResult<Self> {
        Ok(Self {
            toks: lex(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        syntax(
            self.offset(),
            format!("expected {wanted}, found {}", self.peek().describe()),
        )
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn string(&mut self, wanted: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(wanted)),
        }
    }

    fn number(&mut self) -> PResult<f64> {
        match self.peek().clone() {
            Tok::Num(n) => {
                let at = self.offset();
                self.bump();
                let v: f64 = n.parse().map_err(|_| syntax(at, "malformed number"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(syntax(at, "number out of range"))
                }
            }
            _ => Err(self.unexpected("a number")),
        }
    }

    fn constraint(&mut self) -> PResult<Constraint> {
        let at = self.offset();
        let name = match self.bump() {
            Tok::Ident(s) => s,
            other => return Err(syntax(at, format!("expected a verb, found {}", other.describe()))),
        };
        let arity = |expected: &str| ParseError {
            kind: ParseErrorKind::Arity,
            offset: at,
            message: format!("{name} takes {expected}"),
        };
        let shape = VerbShape::of(&name).ok_or_else(|| ParseError {
            kind: ParseErrorKind::UnknownVerb,
            offset: at,
            message: format!("unknown verb `{name}`"),
        })?;
        self.expect(Tok::LParen, "`(`")?;

        let mut columns = Vec::new();
        let verb;
        if shape == VerbShape::Size {
            verb = Verb::HasSize;
        } else if shape == VerbShape::Satisfies {
            if *self.peek() == Tok::RParen {
                return Err(arity(shape.describe()));
            }
            let expr = self.row_expr()?;
            columns = expr.columns();
            if columns.is_empty() {
                return Err(ParseError {
                    kind: ParseErrorKind::Arity,
                    offset: at,
                    message: "satisfies needs an expression over at least one column".into(),
                });
            }
            self.separator(&arity, shape)?;
            let name = self.string("a constraint name")?;
            verb = Verb::Satisfies { expr, name };
        } else {
            if *self.peek() == Tok::RParen {
                return Err(arity(shape.describe()));
            }
            columns.push(self.string("a column name string")?);
            verb = match shape {
                VerbShape::Quantile => {
                    self.separator(&arity, shape)?;
                    let at = self.offset();
                    let q = self.number()?;
                    if !(0.0..=1.0).contains(&q) {
                        return Err(syntax(at, "quantile must lie in [0, 1]"));
                    }
                    Verb::HasApproxQuantile(q)
                }
                VerbShape::Contained => {
                    self.separator(&arity, shape)?;
                    Verb::IsContainedIn(self.literal_list()?)
                }
                VerbShape::Pattern => {
                    self.separator(&arity, shape)?;
                    Verb::HasPattern(self.string("a pattern string")?)
                }
                _ => shape.simple_verb(),
            };
        }

        let predicate = match shape.predicate_rule() {
            PredicateRule::None => None,
            PredicateRule::Required => {
                if shape != VerbShape::Size {
                    self.separator(&arity, shape)?;
                } else if *self.peek() == Tok::RParen {
                    return Err(arity(shape.describe()));
                }
                Some(self.predicate()?)
            }
            PredicateRule::Optional => {
                if *self.peek() == Tok::Comma {
                    self.bump();
                    Some(self.predicate()?)
                } else {
                    None
                }
            }
        };
        if *self.peek() == Tok::Comma {
            return Err(arity(shape.describe()));
        }
        self.expect(Tok::RParen, "`)`")?;

        let filter = if *self.peek() == Tok::Dot {
            self.bump();
            if !self.is_keyword("where") {
                return Err(self.unexpected("`where`"));
            }
            self.bump();
            self.expect(Tok::LParen, "`(`")?;
            let f = self.row_expr()?;
            self.expect(Tok::RParen, "`)`")?;
            Some(f)
        } else {
            None
        };
        if *self.peek() != Tok::Eof {
            return Err(self.unexpected("end of input"));
        }
        Ok(Constraint {
            id: String::new(),
            verb,
            columns,
            predicate,
            filter,
            assumption_ids: Vec::new(),
        })
    }

    fn separator(&mut self, arity: &dyn Fn(&str) -> ParseError, shape: VerbShape) -> PResult<()> {
        match self.peek() {
            Tok::Comma => {
                self.bump();
                Ok(())
            }
            Tok::RParen => Err(arity(shape.describe())),
            _ => Err(self.unexpected("`,`")),
        }
    }

    fn predicate(&mut self) -> PResult<Predicate> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Op(CmpOp::Ne) => Err(syntax(at, "`!=` is not a predicate comparator")),
            Tok::Op(op) => {
                self.bump();
                Ok(Predicate::Compare(op, self.number()?))
            }
            Tok::Ident(s) if s == "between" => {
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let lo = self.number()?;
                self.expect(Tok::Comma, "`,`")?;
                let hi = self.number()?;
                self.expect(Tok::RParen, "`)`")?;
                if lo > hi {
                    return Err(syntax(at, "between requires lo <= hi"));
                }
                Ok(Predicate::Between(lo, hi))
            }
            Tok::Ident(s) if s == "in" => {
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                if *self.peek() == Tok::RParen {
                    return Err(syntax(at, "in(..) needs at least one value"));
                }
                let mut set = vec![self.number()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    set.push(self.number()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(Predicate::In(set))
            }
            _ => Err(self.unexpected("a predicate")),
        }
    }

    fn literal_list(&mut self) -> PResult<Vec<Literal>> {
        self.expect(Tok::LBracket, "`[`")?;
        if *self.peek() == Tok::RBracket {
            return Err(syntax(self.offset(), "value set must not be empty"));
        }
        let mut out = vec![self.literal()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            out.push(self.literal()?);
        }
        self.expect(Tok::RBracket, "`]`")?;
        Ok(out)
    }

    fn literal(&mut self) -> PResult<Literal> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(Literal::Text(s))
            }
            Tok::Num(n) => {
                self.bump();
                number_literal(&n).ok_or_else(|| syntax(at, "malformed number"))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Literal::Boolean(s == "true"))
            }
            _ => Err(self.unexpected("a literal")),
        }
    }

    fn row_expr(&mut self) -> PResult<RowExpr> {
        let mut left = self.and_expr()?;
        while self.is_keyword("or") {
            self.bump();
            let right = self.and_expr()?;
            left = RowExpr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<RowExpr> {
        let mut left = self.not_expr()?;
        while self.is_keyword("and") {
            self.bump();
            let right = self.not_expr()?;
            left = RowExpr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<RowExpr> {
        if self.is_keyword("not") {
            self.bump();
            return Ok(RowExpr::Not(Box::new(self.not_expr()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<RowExpr> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.row_expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(s) if (s == "true" || s == "false") && !matches!(self.peek_at(1), Tok::Op(_)) => {
                self.bump();
                Ok(RowExpr::Const(s == "true"))
            }
            _ => {
                let left = self.operand()?;
                if let Operand::Column(column) = &left {
                    if self.is_keyword("is") {
                        self.bump();
                        let negated = self.is_keyword("not");
                        if negated {
                            self.bump();
                        }
                        if !self.is_keyword("null") {
                            return Err(self.unexpected("`null`"));
                        }
                        self.bump();
                        return Ok(RowExpr::IsNull {
                            column: column.clone(),
                            negated,
                        });
                    }
                }
                let op = match self.peek() {
                    Tok::Op(op) => *op,
                    _ => return Err(self.unexpected("a comparison operator")),
                };
                self.bump();
                let right = self.operand()?;
                Ok(RowExpr::Compare { left, op, right })
            }
        }
    }

    fn operand(&mut self) -> PResult<Operand> {
        match self.peek().clone() {
            Tok::Quoted(name) => {
                self.bump();
                Ok(Operand::Column(name))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Operand::Literal(Literal::Boolean(s == "true")))
            }
            Tok::Ident(s) if KEYWORDS.contains(&s.as_str()) => Err(self.unexpected("a column or literal")),
            Tok::Ident(s) => {
                self.bump();
                Ok(Operand::Column(s))
            }
            Tok::Str(_) | Tok::Num(_) => Ok(Operand::Literal(self.literal()?)),
            _ => Err(self.unexpected("a column or literal")),
        }
    }
}

fn number_literal(text: &str) -> Option<Literal> {
    let is_int = !text.contains(['.', 'e', 'E']);
    if is_int {
        if let Ok(i) = text.parse::<i64>() {
            return Some(Literal::Integer(i));
        }
    }
    text.parse::<f64>().ok().filter(|v| v.is_finite()).map(Literal::Real)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VerbShape {
    Completeness,
    Complete,
    Unique,
    Min,
    Max,
    Mean,
    StdDev,
    Distinct,
    Quantile,
    Contained,
    Pattern,
    Size,
    Satisfies,
}

enum PredicateRule {
    None,
    Required,
    Optional,
}

impl VerbShape {
    fn of(name: &str) -> Option<Self> {
        Some(match name {
            "hasCompleteness" => VerbShape::Completeness,
            "isComplete" => VerbShape::Complete,
            "isUnique" => VerbShape::Unique,
            "hasMin" => VerbShape::Min,
            "hasMax" => VerbShape::Max,
            "hasMean" => VerbShape::Mean,
            "hasStandardDeviation" => VerbShape::StdDev,
            "hasApproxCountDistinct" => VerbShape::Distinct,
            "hasApproxQuantile" => VerbShape::Quantile,
            "isContainedIn" => VerbShape::Contained,
            "hasPattern" => VerbShape::Pattern,
            "hasSize" => VerbShape::Size,
            "satisfies" => VerbShape::Satisfies,
            _ => return None,
        })
    }

    fn simple_verb(self) -> Verb {
        match self {
            VerbShape::Completeness => Verb::HasCompleteness,
            VerbShape::Complete => Verb::IsComplete,
            VerbShape::Unique => Verb::IsUnique,
            VerbShape::Min => Verb::HasMin,
            VerbShape::Max => Verb::HasMax,
            VerbShape::Mean => Verb::HasMean,
            VerbShape::StdDev => Verb::HasStandardDeviation,
            VerbShape::Distinct => Verb::HasApproxCountDistinct,
            _ => unreachable!("verb with extra arguments"),
        }
    }

    fn predicate_rule(self) -> PredicateRule {
        match self {
            VerbShape::Complete | VerbShape::Unique => PredicateRule::None,
            VerbShape::Contained | VerbShape::Pattern | VerbShape::Satisfies => PredicateRule::Optional,
            _ => PredicateRule::Required,
        }
    }

    fn describe(self) -> &'static str {
        match self {
            VerbShape::Complete | VerbShape::Unique => "exactly one argument (column)",
            VerbShape::Quantile => "three arguments (column, quantile, predicate)",
            VerbShape::Contained => "a column, a value list and an optional predicate",
            VerbShape::Pattern => "a column, a pattern and an optional predicate",
            VerbShape::Size => "exactly one argument (predicate)",
            VerbShape::Satisfies => "an expression, a name and an optional predicate",
            _ => "two arguments (column, predicate)",
        }
    }
}

/// Parse one constraint in surface syntax.
pub fn parse_constraint(text: &str) -> Result<Constraint, ParseError> {
    Parser::new(text)?.constraint()
}

/// Parse a bare row expression, as found inside `.where(..)`.
pub fn parse_row_expr(text: &str) -> Result<RowExpr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.row_expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.unexpected("end of input"));
    }
    Ok(e)
}
