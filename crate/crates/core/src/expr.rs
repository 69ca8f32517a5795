//! Binding expression language.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr       := additive (cmp_op additive)?
//! additive   := term (('+' | '-') term)*
//! term       := unary (('*' | '/') unary)*
//! unary      := '-' unary | power
//! power      := primary ('^' unary)?          right-associative
//! primary    := number | ident | ident '(' args ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `[A-Za-z_][A-Za-z0-9_-]*` and never end in `-`, so
//! `dino-size` is one name while `a - b` is a subtraction. Trigonometric
//! functions take degrees. Comparisons evaluate to exactly `1` or `0`.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

/// Variable environment: name to finite scalar.
pub type Env = IndexMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at {pos}: {message}")]
    SyntaxError { pos: usize, message: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error: {0}")]
    DomainError(String),
}

impl ExprError {
    pub fn code(&self) -> &'static str {
        match self {
            ExprError::SyntaxError { .. } => "SyntaxError",
            ExprError::UnknownIdentifier(_) => "UnknownIdentifier",
            ExprError::DivisionByZero => "DivisionByZero",
            ExprError::DomainError(_) => "DomainError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Gt,
    Lt,
    Ge,
    Le,
    Eq,
}

impl CompareOp {
    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Gt => ">",
            CompareOp::Lt => "<",
            CompareOp::Ge => ">=",
            CompareOp::Le => "<=",
            CompareOp::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Sqrt,
    Abs,
    Min,
    Max,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Min | Func::Max => n >= 1,
            Func::Pow => n == 2,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Identifier(String),
    Neg(Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Compare(CompareOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// True when `s` is a legal variable name.
pub fn is_identifier(s: &str) -> bool {
    let bytes = s.as_bytes();
    match bytes.first() {
        Some(c) if c.is_ascii_alphabetic() || *c == b'_' => {}
        _ => return false,
    }
    bytes[1..]
        .iter()
        .all(|c| c.is_ascii_alphanumeric() || *c == b'_' || *c == b'-')
        && !s.ends_with('-')
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Cmp(CompareOp),
}

fn syntax(pos: usize, message: impl Into<String>) -> ExprError {
    ExprError::SyntaxError { pos, message: message.into() }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            i += 1;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'-') {
                i += 1;
            }
            // a trailing '-' belongs to the next token
            while b[i - 1] == b'-' {
                i -= 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i < b.len() && b[i] == b'.' {
                i += 1;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                    j += 1;
                }
                if j < b.len() && b[j].is_ascii_digit() {
                    while j < b.len() && b[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let lit = &text[start..i];
            let value: f64 = lit
                .parse()
                .map_err(|_| syntax(start, format!("malformed number `{lit}`")))?;
            out.push((start, Tok::Num(value)));
            continue;
        }
        let two = |next: u8| i + 1 < b.len() && b[i + 1] == next;
        let (tok, len) = match c {
            b'+' => (Tok::Plus, 1),
            b'-' => (Tok::Minus, 1),
            b'*' => (Tok::Star, 1),
            b'/' => (Tok::Slash, 1),
            b'^' => (Tok::Caret, 1),
            b'(' => (Tok::LParen, 1),
            b')' => (Tok::RParen, 1),
            b',' => (Tok::Comma, 1),
            b'>' if two(b'=') => (Tok::Cmp(CompareOp::Ge), 2),
            b'<' if two(b'=') => (Tok::Cmp(CompareOp::Le), 2),
            b'=' if two(b'=') => (Tok::Cmp(CompareOp::Eq), 2),
            b'>' => (Tok::Cmp(CompareOp::Gt), 1),
            b'<' => (Tok::Cmp(CompareOp::Lt), 1),
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        out.push((start, tok));
        i += len;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map_or(self.end, |(p, _)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(_, t)| t.clone());
        self.idx += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(syntax(pos, format!("expected {what}"))),
        }
    }

    fn comparison(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.additive()?;
        if let Some(Tok::Cmp(op)) = self.peek().cloned() {
            self.bump();
            let rhs = self.additive()?;
            if let Some(Tok::Cmp(_)) = self.peek() {
                return Err(syntax(self.pos(), "comparisons cannot be chained"));
            }
            return Ok(Expr::Compare(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinaryOp::Add,
                Some(Tok::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinaryOp::Mul,
                Some(Tok::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Tok::Minus) = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if let Some(Tok::Caret) = self.peek() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Number(v)),
            Some(Tok::Ident(name)) => {
                if let Some(Tok::LParen) = self.peek() {
                    let func = Func::lookup(&name)
                        .ok_or_else(|| syntax(pos, format!("unknown function `{name}`")))?;
                    self.bump();
                    let mut args = Vec::new();
                    if let Some(Tok::RParen) = self.peek() {
                        self.bump();
                    } else {
                        loop {
                            args.push(self.comparison()?);
                            let p = self.pos();
                            match self.bump() {
                                Some(Tok::Comma) => continue,
                                Some(Tok::RParen) => break,
                                _ => return Err(syntax(p, "expected `,` or `)`")),
                            }
                        }
                    }
                    if !func.arity_ok(args.len()) {
                        return Err(syntax(
                            pos,
                            format!("wrong number of arguments to `{name}`: {}", args.len()),
                        ));
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    Ok(Expr::Identifier(name))
                }
            }
            Some(Tok::LParen) => {
                let inner = self.comparison()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(_) => Err(syntax(pos, "unexpected token")),
            None => Err(syntax(pos, "unexpected end of input")),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, idx: 0, end: text.len() };
    let e = p.comparison()?;
    if p.idx < p.toks.len() {
        return Err(syntax(p.pos(), "unexpected trailing input"));
    }
    Ok(e)
}

fn check(value: f64, what: &str) -> Result<f64, ExprError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ExprError::DomainError(format!("{what} is not finite")))
    }
}

pub fn evaluate(expr: &Expr, env: &Env) -> Result<f64, ExprError> {
    match expr {
        Expr::Number(v) => Ok(*v),
        Expr::Identifier(name) => env
            .get(name)
            .copied()
            .ok_or_else(|| ExprError::UnknownIdentifier(name.clone())),
        Expr::Neg(inner) => Ok(-evaluate(inner, env)?),
        Expr::Binary(op, l, r) => {
            let a = evaluate(l, env)?;
            let b = evaluate(r, env)?;
            let v = match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => {
                    if b == 0.0 {
                        return Err(ExprError::DivisionByZero);
                    }
                    a / b
                }
                BinaryOp::Pow => a.powf(b),
            };
            check(v, op.symbol())
        }
        Expr::Compare(op, l, r) => {
            let a = evaluate(l, env)?;
            let b = evaluate(r, env)?;
            let truth = match op {
                CompareOp::Gt => a > b,
                CompareOp::Lt => a < b,
                CompareOp::Ge => a >= b,
                CompareOp::Le => a <= b,
                CompareOp::Eq => a == b,
            };
            Ok(if truth { 1.0 } else { 0.0 })
        }
        Expr::Call(func, args) => {
            let vals = args
                .iter()
                .map(|a| evaluate(a, env))
                .collect::<Result<Vec<_>, _>>()?;
            let v = match func {
                Func::Sin => sin_deg(vals[0]),
                Func::Cos => cos_deg(vals[0]),
                Func::Tan => sin_deg(vals[0]) / cos_deg(vals[0]),
                Func::Sqrt => {
                    if vals[0] < 0.0 {
                        return Err(ExprError::DomainError(format!("sqrt of {}", vals[0])));
                    }
                    vals[0].sqrt()
                }
                Func::Abs => vals[0].abs(),
                Func::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                Func::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Func::Pow => vals[0].powf(vals[1]),
            };
            check(v, func.name())
        }
    }
}

/// Reduce degrees into [-180, 180] before converting, so whole multiples of
/// 30 degrees land on exact table values (sin 30 = 0.5).
fn reduce_deg(x: f64) -> f64 {
    let r = x % 360.0;
    if r > 180.0 {
        r - 360.0
    } else if r < -180.0 {
        r + 360.0
    } else {
        r
    }
}

fn sin_deg(x: f64) -> f64 {
    let r = reduce_deg(x);
    match r {
        r if r == 0.0 || r.abs() == 180.0 => 0.0,
        r if r == 30.0 || r == 150.0 => 0.5,
        r if r == -30.0 || r == -150.0 => -0.5,
        r if r == 90.0 => 1.0,
        r if r == -90.0 => -1.0,
        r => r.to_radians().sin(),
    }
}

fn cos_deg(x: f64) -> f64 {
    sin_deg(x + 90.0)
}

/// Identifiers referenced by `expr`, deduplicated and sorted.
pub fn free_variables(expr: &Expr) -> BTreeSet<String> {
    fn walk(e: &Expr, out: &mut BTreeSet<String>) {
        match e {
            Expr::Number(_) => {}
            Expr::Identifier(n) => {
                out.insert(n.clone());
            }
            Expr::Neg(inner) => walk(inner, out),
            Expr::Binary(_, l, r) | Expr::Compare(_, l, r) => {
                walk(l, out);
                walk(r, out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
        }
    }
    let mut out = BTreeSet::new();
    walk(expr, &mut out);
    out
}

/// Fully parenthesized rendering that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(v) => write!(f, "{v:?}"),
            Expr::Identifier(n) => f.write_str(n),
            Expr::Neg(inner) => write!(f, "(-{inner})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Compare(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
