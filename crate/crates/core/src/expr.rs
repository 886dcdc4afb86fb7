//! Measure expressions: parsing, evaluation, symbolic differentiation and
//! structural classification.
//!
//! Grammar (standard precedence, left associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := '-' factor | primary
//! primary := number | ident | 'avg' '(' ident ')' | '(' expr ')'
//! ```
//!
//! `avg(x)` is sugar: it is rewritten at parse time into `sum_x / count_x`,
//! declaring the two derived sub-measures, so every engine downstream only
//! ever sees additive sub-measures.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::cube::AggregatorKind;
use crate::error::{Error, Result};

/// Arithmetic expression over named sub-measures.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasureExpr {
    Literal(f64),
    Ref(String),
    Neg(Box<MeasureExpr>),
    Add(Box<MeasureExpr>, Box<MeasureExpr>),
    Sub(Box<MeasureExpr>, Box<MeasureExpr>),
    Mul(Box<MeasureExpr>, Box<MeasureExpr>),
    Div(Box<MeasureExpr>, Box<MeasureExpr>),
}

impl MeasureExpr {
    /// Evaluates against an environment resolving sub-measure names.
    /// Division by an exact zero reports the measure as undefined.
    pub fn evaluate(&self, env: &impl Fn(&str) -> Option<f64>) -> Result<f64> {
        match self {
            MeasureExpr::Literal(x) => Ok(*x),
            MeasureExpr::Ref(name) => env(name).ok_or_else(|| Error::UnknownSubMeasure {
                name: name.clone(),
                pos: 0,
            }),
            MeasureExpr::Neg(a) => Ok(-a.evaluate(env)?),
            MeasureExpr::Add(a, b) => Ok(a.evaluate(env)? + b.evaluate(env)?),
            MeasureExpr::Sub(a, b) => Ok(a.evaluate(env)? - b.evaluate(env)?),
            MeasureExpr::Mul(a, b) => Ok(a.evaluate(env)? * b.evaluate(env)?),
            MeasureExpr::Div(a, b) => {
                let d = b.evaluate(env)?;
                if d == 0.0 {
                    return Err(Error::DivisionByZero);
                }
                Ok(a.evaluate(env)? / d)
            }
        }
    }

    /// Collects referenced sub-measure names.
    pub fn references(&self, out: &mut BTreeSet<String>) {
        match self {
            MeasureExpr::Literal(_) => {}
            MeasureExpr::Ref(name) => {
                out.insert(name.clone());
            }
            MeasureExpr::Neg(a) => a.references(out),
            MeasureExpr::Add(a, b)
            | MeasureExpr::Sub(a, b)
            | MeasureExpr::Mul(a, b)
            | MeasureExpr::Div(a, b) => {
                a.references(out);
                b.references(out);
            }
        }
    }

    /// Symbolic partial derivative with respect to `wrt`. Simplification is
    /// limited to constant folding and the 0/1 identities, so derivatives stay
    /// readable and cheap to evaluate along integration paths.
    pub fn differentiate(&self, wrt: &str) -> MeasureExpr {
        use MeasureExpr::*;
        match self {
            Literal(_) => Literal(0.0),
            Ref(name) => Literal(if name == wrt { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.differentiate(wrt)),
            Add(a, b) => add(a.differentiate(wrt), b.differentiate(wrt)),
            Sub(a, b) => sub(a.differentiate(wrt), b.differentiate(wrt)),
            Mul(a, b) => add(
                mul(a.differentiate(wrt), (**b).clone()),
                mul((**a).clone(), b.differentiate(wrt)),
            ),
            // Split quotient rule: d(u/v) = du/v - u*dv/v^2. Keeping the two
            // terms apart lets the zero identities erase whichever vanishes.
            Div(a, b) => sub(
                div(a.differentiate(wrt), (**b).clone()),
                div(
                    mul((**a).clone(), b.differentiate(wrt)),
                    mul((**b).clone(), (**b).clone()),
                ),
            ),
        }
    }

    /// Resolves references to column indexes for allocation-free evaluation.
    pub fn bind(&self, columns: &[String]) -> Result<BoundExpr> {
        Ok(match self {
            MeasureExpr::Literal(x) => BoundExpr::Literal(*x),
            MeasureExpr::Ref(name) => {
                let idx = columns.iter().position(|c| c == name).ok_or_else(|| {
                    Error::UnknownSubMeasure {
                        name: name.clone(),
                        pos: 0,
                    }
                })?;
                BoundExpr::Ref(idx)
            }
            MeasureExpr::Neg(a) => BoundExpr::Neg(Box::new(a.bind(columns)?)),
            MeasureExpr::Add(a, b) => {
                BoundExpr::Add(Box::new(a.bind(columns)?), Box::new(b.bind(columns)?))
            }
            MeasureExpr::Sub(a, b) => {
                BoundExpr::Sub(Box::new(a.bind(columns)?), Box::new(b.bind(columns)?))
            }
            MeasureExpr::Mul(a, b) => {
                BoundExpr::Mul(Box::new(a.bind(columns)?), Box::new(b.bind(columns)?))
            }
            MeasureExpr::Div(a, b) => {
                BoundExpr::Div(Box::new(a.bind(columns)?), Box::new(b.bind(columns)?))
            }
        })
    }
}

fn bx(e: MeasureExpr) -> Box<MeasureExpr> {
    Box::new(e)
}

fn lit_of(e: &MeasureExpr) -> Option<f64> {
    match e {
        MeasureExpr::Literal(x) => Some(*x),
        _ => None,
    }
}

fn neg(a: MeasureExpr) -> MeasureExpr {
    match a {
        MeasureExpr::Literal(x) => MeasureExpr::Literal(-x),
        MeasureExpr::Neg(inner) => *inner,
        other => MeasureExpr::Neg(bx(other)),
    }
}

fn add(a: MeasureExpr, b: MeasureExpr) -> MeasureExpr {
    match (lit_of(&a), lit_of(&b)) {
        (Some(x), Some(y)) => MeasureExpr::Literal(x + y),
        (Some(0.0), None) => b,
        (None, Some(0.0)) => a,
        _ => MeasureExpr::Add(bx(a), bx(b)),
    }
}

fn sub(a: MeasureExpr, b: MeasureExpr) -> MeasureExpr {
    match (lit_of(&a), lit_of(&b)) {
        (Some(x), Some(y)) => MeasureExpr::Literal(x - y),
        (Some(0.0), None) => neg(b),
        (None, Some(0.0)) => a,
        _ => MeasureExpr::Sub(bx(a), bx(b)),
    }
}

fn mul(a: MeasureExpr, b: MeasureExpr) -> MeasureExpr {
    match (lit_of(&a), lit_of(&b)) {
        (Some(x), Some(y)) => MeasureExpr::Literal(x * y),
        (Some(0.0), None) | (None, Some(0.0)) => MeasureExpr::Literal(0.0),
        (Some(1.0), None) => b,
        (None, Some(1.0)) => a,
        _ => MeasureExpr::Mul(bx(a), bx(b)),
    }
}

fn div(a: MeasureExpr, b: MeasureExpr) -> MeasureExpr {
    match (lit_of(&a), lit_of(&b)) {
        (Some(0.0), _) => MeasureExpr::Literal(0.0),
        (Some(x), Some(y)) if y != 0.0 => MeasureExpr::Literal(x / y),
        (None, Some(1.0)) => a,
        _ => MeasureExpr::Div(bx(a), bx(b)),
    }
}

impl fmt::Display for MeasureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_prec(self, 0, f)
    }
}

fn prec(e: &MeasureExpr) -> u8 {
    match e {
        MeasureExpr::Add(..) | MeasureExpr::Sub(..) => 1,
        MeasureExpr::Mul(..) | MeasureExpr::Div(..) => 2,
        MeasureExpr::Neg(..) => 3,
        MeasureExpr::Literal(_) | MeasureExpr::Ref(_) => 4,
    }
}

fn fmt_prec(e: &MeasureExpr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let own = prec(e);
    let parens = own < min;
    if parens {
        write!(f, "(")?;
    }
    match e {
        MeasureExpr::Literal(x) => write!(f, "{x}")?,
        MeasureExpr::Ref(name) => write!(f, "{name}")?,
        MeasureExpr::Neg(a) => {
            write!(f, "-")?;
            fmt_prec(a, 4, f)?;
        }
        MeasureExpr::Add(a, b) => {
            fmt_prec(a, 1, f)?;
            write!(f, " + ")?;
            fmt_prec(b, 2, f)?;
        }
        MeasureExpr::Sub(a, b) => {
            fmt_prec(a, 1, f)?;
            write!(f, " - ")?;
            fmt_prec(b, 2, f)?;
        }
        MeasureExpr::Mul(a, b) => {
            fmt_prec(a, 2, f)?;
            write!(f, " * ")?;
            fmt_prec(b, 3, f)?;
        }
        MeasureExpr::Div(a, b) => {
            fmt_prec(a, 2, f)?;
            write!(f, " / ")?;
            fmt_prec(b, 3, f)?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

/// Expression with references resolved to column indexes; evaluation takes a
/// slice of column values and allocates nothing.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundExpr {
    Literal(f64),
    Ref(usize),
    Neg(Box<BoundExpr>),
    Add(Box<BoundExpr>, Box<BoundExpr>),
    Sub(Box<BoundExpr>, Box<BoundExpr>),
    Mul(Box<BoundExpr>, Box<BoundExpr>),
    Div(Box<BoundExpr>, Box<BoundExpr>),
}

impl BoundExpr {
    pub fn evaluate(&self, values: &[f64]) -> Result<f64> {
        match self {
            BoundExpr::Literal(x) => Ok(*x),
            BoundExpr::Ref(i) => Ok(values[*i]),
            BoundExpr::Neg(a) => Ok(-a.evaluate(values)?),
            BoundExpr::Add(a, b) => Ok(a.evaluate(values)? + b.evaluate(values)?),
            BoundExpr::Sub(a, b) => Ok(a.evaluate(values)? - b.evaluate(values)?),
            BoundExpr::Mul(a, b) => Ok(a.evaluate(values)? * b.evaluate(values)?),
            BoundExpr::Div(a, b) => {
                let d = b.evaluate(values)?;
                if d == 0.0 {
                    return Err(Error::DivisionByZero);
                }
                Ok(a.evaluate(values)? / d)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Token {
    Number(f64),
    Ident(usize, usize), // byte range into the source
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn next_token(&mut self) -> Result<(usize, Token)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        if self.pos >= self.bytes.len() {
            return Ok((start, Token::End));
        }
        let c = self.bytes[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Token::Plus
            }
            b'-' => {
                self.pos += 1;
                Token::Minus
            }
            b'*' => {
                self.pos += 1;
                Token::Star
            }
            b'/' => {
                self.pos += 1;
                Token::Slash
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b'0'..=b'9' => {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if self.pos < self.bytes.len() && self.bytes[self.pos] == b'.' {
                    self.pos += 1;
                    while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                }
                if self.pos < self.bytes.len()
                    && (self.bytes[self.pos] == b'e' || self.bytes[self.pos] == b'E')
                {
                    let mark = self.pos;
                    self.pos += 1;
                    if self.pos < self.bytes.len()
                        && (self.bytes[self.pos] == b'+' || self.bytes[self.pos] == b'-')
                    {
                        self.pos += 1;
                    }
                    if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                            self.pos += 1;
                        }
                    } else {
                        self.pos = mark; // not an exponent, e.g. "2e" in "2*e"
                    }
                }
                let text = &self.src[start..self.pos];
                let value = text.parse::<f64>().map_err(|_| Error::Syntax {
                    pos: start,
                    msg: format!("invalid number `{text}`"),
                })?;
                Token::Number(value)
            }
            c if c == b'_' || c.is_ascii_alphabetic() => {
                while self.pos < self.bytes.len()
                    && (self.bytes[self.pos] == b'_'
                        || self.bytes[self.pos].is_ascii_alphanumeric())
                {
                    self.pos += 1;
                }
                Token::Ident(start, self.pos)
            }
            other => {
                return Err(Error::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok((start, tok))
    }
}

/// Result of parsing a measure definition: the expression tree plus any
/// sub-measure declarations introduced by `avg(...)` rewriting.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedMeasure {
    pub expr: MeasureExpr,
    pub extra_decls: Vec<(String, AggregatorKind)>,
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    current: (usize, Token),
    declared: Vec<String>,
    extra: Vec<(String, AggregatorKind)>,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<()> {
        self.current = self.lexer.next_token()?;
        Ok(())
    }

    fn ident_text(&self, tok: Token) -> &'a str {
        match tok {
            Token::Ident(a, b) => &self.lexer.src[a..b],
            _ => unreachable!("ident_text on non-ident"),
        }
    }

    fn known(&self, name: &str) -> bool {
        self.declared.iter().any(|d| d == name) || self.extra.iter().any(|(d, _)| d == name)
    }

    fn expr(&mut self) -> Result<MeasureExpr> {
        let mut node = self.term()?;
        loop {
            match self.current.1 {
                Token::Plus => {
                    self.bump()?;
                    node = MeasureExpr::Add(Box::new(node), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.bump()?;
                    node = MeasureExpr::Sub(Box::new(node), Box::new(self.term()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn term(&mut self) -> Result<MeasureExpr> {
        let mut node = self.factor()?;
        loop {
            match self.current.1 {
                Token::Star => {
                    self.bump()?;
                    node = MeasureExpr::Mul(Box::new(node), Box::new(self.factor()?));
                }
                Token::Slash => {
                    self.bump()?;
                    node = MeasureExpr::Div(Box::new(node), Box::new(self.factor()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn factor(&mut self) -> Result<MeasureExpr> {
        if self.current.1 == Token::Minus {
            self.bump()?;
            return Ok(MeasureExpr::Neg(Box::new(self.factor()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<MeasureExpr> {
        let (pos, tok) = self.current;
        match tok {
            Token::Number(x) => {
                self.bump()?;
                Ok(MeasureExpr::Literal(x))
            }
            Token::LParen => {
                self.bump()?;
                let inner = self.expr()?;
                if self.current.1 != Token::RParen {
                    return Err(Error::Syntax {
                        pos: self.current.0,
                        msg: "expected `)`".into(),
                    });
                }
                self.bump()?;
                Ok(inner)
            }
            Token::Ident(..) => {
                let name = self.ident_text(tok).to_string();
                self.bump()?;
                if self.current.1 == Token::LParen {
                    if name != "avg" {
                        return Err(Error::Syntax {
                            pos,
                            msg: format!("unknown function `{name}` (only avg is supported)"),
                        });
                    }
                    return self.avg_call();
                }
                if !self.known(&name) {
                    return Err(Error::UnknownSubMeasure { name, pos });
                }
                Ok(MeasureExpr::Ref(name))
            }
            Token::End => Err(Error::Syntax {
                pos,
                msg: "unexpected end of expression".into(),
            }),
            other => Err(Error::Syntax {
                pos,
                msg: format!("unexpected token {other:?}"),
            }),
        }
    }

    /// `avg(col)` becomes `sum_col / count_col`, declaring both derived
    /// sub-measures when they are not already known.
    fn avg_call(&mut self) -> Result<MeasureExpr> {
        self.bump()?; // consume '('
        let (pos, tok) = self.current;
        let column = match tok {
            Token::Ident(..) => self.ident_text(tok).to_string(),
            _ => {
                return Err(Error::Syntax {
                    pos,
                    msg: "avg(...) expects a column name".into(),
                })
            }
        };
        self.bump()?;
        if self.current.1 != Token::RParen {
            return Err(Error::Syntax {
                pos: self.current.0,
                msg: "expected `)` after avg argument".into(),
            });
        }
        self.bump()?;

        let sum_name = format!("sum_{column}");
        let count_name = format!("count_{column}");
        if !self.known(&sum_name) {
            self.extra
                .push((sum_name.clone(), AggregatorKind::Sum(column.clone())));
        }
        if !self.known(&count_name) {
            self.extra
                .push((count_name.clone(), AggregatorKind::Count(column.clone())));
        }
        Ok(MeasureExpr::Div(
            Box::new(MeasureExpr::Ref(sum_name)),
            Box::new(MeasureExpr::Ref(count_name)),
        ))
    }
}

/// Parses a measure definition against the declared sub-measure names.
pub fn parse_measure(text: &str, declared: &[String]) -> Result<ParsedMeasure> {
    let mut parser = Parser {
        lexer: Lexer::new(text),
        current: (0, Token::End),
        declared: declared.to_vec(),
        extra: Vec::new(),
    };
    parser.current = parser.lexer.next_token()?;
    let expr = parser.expr()?;
    if parser.current.1 != Token::End {
        return Err(Error::Syntax {
            pos: parser.current.0,
            msg: "trailing input after expression".into(),
        });
    }
    Ok(ParsedMeasure {
        expr,
        extra_decls: parser.extra,
    })
}

/// Structural class of a measure, driving engine selection.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasureClass {
    /// Affine in every sub-measure: `w0 + sum_v w_v * m_v`.
    Linear { intercept: f64, weights: Vec<f64> },
    /// Exactly one sub-measure divided by another.
    Ratio {
        numerator: usize,
        denominator: usize,
    },
    /// Any other arithmetic composition; differentiable everywhere the
    /// denominators stay away from zero.
    Differentiable,
    /// Externally supplied black-box measure; only record-level game engines
    /// apply.
    Opaque,
}

impl MeasureClass {
    pub fn tag(&self) -> &'static str {
        match self {
            MeasureClass::Linear { .. } => "linear",
            MeasureClass::Ratio { .. } => "ratio",
            MeasureClass::Differentiable => "differentiable",
            MeasureClass::Opaque => "opaque",
        }
    }
}

type OpaqueFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;

/// Black-box measure over the vector of sub-measure values.
#[derive(Clone)]
pub struct OpaqueMeasure(Arc<OpaqueFn>);

impl OpaqueMeasure {
    pub fn new(f: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn call(&self, values: &[f64]) -> Result<f64> {
        (self.0)(values)
    }
}

impl fmt::Debug for OpaqueMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<opaque measure>")
    }
}

#[derive(Clone, Debug)]
enum MeasureBody {
    Expr { expr: MeasureExpr, bound: BoundExpr },
    Opaque(OpaqueMeasure),
}

/// A measure definition: the expression (or black box) plus the ordered
/// sub-measure declarations that define the observation-matrix columns.
#[derive(Clone, Debug)]
pub struct MeasureSpec {
    body: MeasureBody,
    sub_measures: Vec<(String, AggregatorKind)>,
    column_names: Vec<String>,
    class: MeasureClass,
}

impl MeasureSpec {
    /// Builds a spec from a parsed expression and its declarations, verifying
    /// that every referenced name is declared and classifying the structure.
    pub fn new(expr: MeasureExpr, sub_measures: Vec<(String, AggregatorKind)>) -> Result<Self> {
        let column_names: Vec<String> = sub_measures.iter().map(|(n, _)| n.clone()).collect();
        {
            let mut seen = BTreeSet::new();
            for name in &column_names {
                if !seen.insert(name.clone()) {
                    return Err(Error::DuplicateAttribute(name.clone()));
                }
            }
        }
        let mut refs = BTreeSet::new();
        expr.references(&mut refs);
        for name in &refs {
            if !column_names.contains(name) {
                return Err(Error::UnknownSubMeasure {
                    name: name.clone(),
                    pos: 0,
                });
            }
        }
        let bound = expr.bind(&column_names)?;
        let class = classify_expr(&expr, &column_names);
        Ok(Self {
            body: MeasureBody::Expr { expr, bound },
            sub_measures,
            column_names,
            class,
        })
    }

    /// Parses a measure definition text, folding any `avg(...)`-derived
    /// declarations into the column list.
    pub fn parse(text: &str, declared: Vec<(String, AggregatorKind)>) -> Result<Self> {
        let names: Vec<String> = declared.iter().map(|(n, _)| n.clone()).collect();
        let parsed = parse_measure(text, &names)?;
        let mut sub_measures = declared;
        sub_measures.extend(parsed.extra_decls);
        Self::new(parsed.expr, sub_measures)
    }

    /// Wraps an externally supplied measure function; classified opaque.
    pub fn opaque(measure: OpaqueMeasure, sub_measures: Vec<(String, AggregatorKind)>) -> Self {
        let column_names = sub_measures.iter().map(|(n, _)| n.clone()).collect();
        Self {
            body: MeasureBody::Opaque(measure),
            sub_measures,
            column_names,
            class: MeasureClass::Opaque,
        }
    }

    pub fn sub_measures(&self) -> &[(String, AggregatorKind)] {
        &self.sub_measures
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn q(&self) -> usize {
        self.sub_measures.len()
    }

    pub fn class(&self) -> &MeasureClass {
        &self.class
    }

    pub fn expr(&self) -> Option<&MeasureExpr> {
        match &self.body {
            MeasureBody::Expr { expr, .. } => Some(expr),
            MeasureBody::Opaque(_) => None,
        }
    }

    /// Whether every declared aggregator is additive under cube partitioning.
    pub fn all_additive(&self) -> bool {
        self.sub_measures.iter().all(|(_, agg)| agg.is_additive())
    }

    /// Evaluates the measure at a vector of column values (one per declared
    /// sub-measure, in declaration order).
    pub fn evaluate_at(&self, values: &[f64]) -> Result<f64> {
        debug_assert_eq!(values.len(), self.q());
        match &self.body {
            MeasureBody::Expr { bound, .. } => bound.evaluate(values),
            MeasureBody::Opaque(f) => f.call(values),
        }
    }

    /// Bound partial derivatives, one per column, for path-integration
    /// engines.
    pub fn gradient(&self) -> Result<Vec<BoundExpr>> {
        let expr = match &self.body {
            MeasureBody::Expr { expr, .. } => expr,
            MeasureBody::Opaque(_) => {
                return Err(Error::InvalidConfig(
                    "opaque measures have no symbolic gradient".into(),
                ))
            }
        };
        self.column_names
            .iter()
            .map(|name| expr.differentiate(name).bind(&self.column_names))
            .collect()
    }
}

/// Structural classification: `linear` iff affine in every reference,
/// `ratio` iff the expression is exactly one reference divided by another,
/// otherwise `differentiable`. Classification looks only at the tree, never
/// at data, so engine routing cannot depend on observed values.
pub fn classify(spec: &MeasureSpec) -> MeasureClass {
    spec.class.clone()
}

fn classify_expr(expr: &MeasureExpr, columns: &[String]) -> MeasureClass {
    if let Some((intercept, coeffs)) = affine_form(expr) {
        let weights = columns
            .iter()
            .map(|c| coeffs.get(c.as_str()).copied().unwrap_or(0.0))
            .collect();
        return MeasureClass::Linear { intercept, weights };
    }
    if let MeasureExpr::Div(a, b) = expr {
        if let (MeasureExpr::Ref(n), MeasureExpr::Ref(d)) = (&**a, &**b) {
            let numerator = columns.iter().position(|c| c == n);
            let denominator = columns.iter().position(|c| c == d);
            if let (Some(numerator), Some(denominator)) = (numerator, denominator) {
                return MeasureClass::Ratio {
                    numerator,
                    denominator,
                };
            }
        }
    }
    MeasureClass::Differentiable
}

type Affine = (f64, std::collections::BTreeMap<String, f64>);

fn affine_form(expr: &MeasureExpr) -> Option<Affine> {
    use MeasureExpr::*;
    match expr {
        Literal(x) => Some((*x, Default::default())),
        Ref(name) => Some((0.0, [(name.clone(), 1.0)].into())),
        Neg(a) => {
            let (c, mut m) = affine_form(a)?;
            m.values_mut().for_each(|w| *w = -*w);
            Some((-c, m))
        }
        Add(a, b) | Sub(a, b) => {
            let sign = if matches!(expr, Sub(..)) { -1.0 } else { 1.0 };
            let (ca, mut ma) = affine_form(a)?;
            let (cb, mb) = affine_form(b)?;
            for (k, w) in mb {
                *ma.entry(k).or_insert(0.0) += sign * w;
            }
            Some((ca + sign * cb, ma))
        }
        Mul(a, b) => {
            let fa = affine_form(a)?;
            let fb = affine_form(b)?;
            if fa.1.is_empty() {
                let (c, mut m) = fb;
                m.values_mut().for_each(|w| *w *= fa.0);
                Some((c * fa.0, m))
            } else if fb.1.is_empty() {
                let (c, mut m) = fa;
                m.values_mut().for_each(|w| *w *= fb.0);
                Some((c * fb.0, m))
            } else {
                None
            }
        }
        Div(a, b) => {
            let fb = affine_form(b)?;
            if fb.1.is_empty() && fb.0 != 0.0 {
                let (c, mut m) = affine_form(a)?;
                m.values_mut().for_each(|w| *w /= fb.0);
                Some((c / fb.0, m))
            } else {
                None
            }
        }
    }
}
