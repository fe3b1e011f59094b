//! Scalar expression language used for model coefficients: anchors, structure
//! functions, potentials, section components.
//!
//! Grammar (whitespace insignificant, byte offsets reported in errors):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := unary ('^' factor)?          // right-associative
//! unary  := '-' unary | atom
//! atom   := number | 'pi' | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Unary minus binds tighter than `^`, so `-x^2` parses as `(-x)^2`. Write
//! `-(x^2)` for the other reading. `pi` is folded to its numeric value at
//! parse time. Known functions: sin, cos, tan, sqrt, exp, log, abs.

use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Sqrt,
    Exp,
    Log,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> Result<f64> {
        let v = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(Error::Domain(format!("sqrt of negative number {x}")));
                }
                x.sqrt()
            }
            Func::Exp => x.exp(),
            Func::Log => {
                if x <= 0.0 {
                    return Err(Error::Domain(format!("log of non-positive number {x}")));
                }
                x.ln()
            }
            Func::Abs => x.abs(),
        };
        if v.is_nan() {
            return Err(Error::Domain(format!("{}({x}) is not a number", self.name())));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Ordered variable environment. Lookups are linear scans; callers in hot
/// loops should resolve an index once with [`VarBinding::position`] and then
/// use [`VarBinding::set_at`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarBinding {
    pairs: Vec<(String, f64)>,
}

impl VarBinding {
    pub fn new() -> Self {
        VarBinding { pairs: Vec::new() }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut b = VarBinding::new();
        for (name, value) in pairs {
            let name = name.into();
            if b.get(&name).is_some() {
                return Err(Error::model(format!("variable `{name}` bound twice")));
            }
            b.pairs.push((name, value));
        }
        Ok(b)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.pairs.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Overwrites an existing entry or appends a new one.
    pub fn set(&mut self, name: &str, value: f64) {
        match self.pairs.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => *v = value,
            None => self.pairs.push((name.to_string(), value)),
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.pairs.iter().position(|(n, _)| n == name)
    }

    pub fn get_at(&self, idx: usize) -> f64 {
        self.pairs[idx].1
    }

    pub fn set_at(&mut self, idx: usize, value: f64) {
        self.pairs[idx].1 = value;
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.pairs.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

// ---------------------------------------------------------------------------
// Lexing

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
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                // exponent part only if it is complete, otherwise the 'e'
                // lexes as a following identifier
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text
                    .parse()
                    .map_err(|_| Error::parse(start, format!("malformed number `{text}`")))?;
                if !value.is_finite() {
                    return Err(Error::parse(start, format!("numeric literal `{text}` overflows")));
                }
                toks.push((Tok::Num(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(Error::parse(i, format!("unexpected character `{ch}`")));
            }
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<()> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::parse(self.offset(), format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let exp = self.factor()?;
            Ok(Expr::Pow(Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            let inner = self.unary()?;
            Ok(Expr::Neg(Box::new(inner)))
        } else {
            self.atom()
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    let func = Func::from_name(&name).ok_or_else(|| {
                        Error::parse(offset, format!("unknown function `{name}`"))
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(&Tok::RParen, "closing `)`")?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Expr::Num(std::f64::consts::PI))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen, "closing `)`")?;
                Ok(inner)
            }
            _ => Err(Error::parse(offset, "expected a number, name, or `(`".to_string())),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr> {
    let toks = lex(src)?;
    let mut p = Parser { toks: &toks, pos: 0, end: src.len() };
    let e = p.expr()?;
    if p.pos != toks.len() {
        return Err(Error::parse(p.offset(), "expected end of input".to_string()));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Evaluation

pub fn eval(e: &Expr, b: &VarBinding) -> Result<f64> {
    let v = match e {
        Expr::Num(v) => *v,
        Expr::Var(name) => b
            .get(name)
            .ok_or_else(|| Error::UnboundVariable(name.clone()))?,
        Expr::Neg(a) => -eval(a, b)?,
        Expr::Add(x, y) => eval(x, b)? + eval(y, b)?,
        Expr::Sub(x, y) => eval(x, b)? - eval(y, b)?,
        Expr::Mul(x, y) => eval(x, b)? * eval(y, b)?,
        Expr::Div(x, y) => {
            let den = eval(y, b)?;
            if den == 0.0 {
                return Err(Error::Domain("division by zero".to_string()));
            }
            eval(x, b)? / den
        }
        Expr::Pow(x, y) => {
            let base = eval(x, b)?;
            let exp = eval(y, b)?;
            let v = base.powf(exp);
            if v.is_nan() {
                return Err(Error::Domain(format!(
                    "{base}^{exp} is not a real number"
                )));
            }
            v
        }
        Expr::Call(f, a) => f.apply(eval(a, b)?)?,
    };
    if v.is_nan() {
        return Err(Error::Domain("expression evaluated to NaN".to_string()));
    }
    Ok(v)
}

impl Expr {
    pub fn eval(&self, b: &VarBinding) -> Result<f64> {
        eval(self, b)
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Add(x, y) | Expr::Sub(x, y) | Expr::Mul(x, y) | Expr::Div(x, y)
            | Expr::Pow(x, y) => {
                x.collect_vars(out);
                y.collect_vars(out);
            }
        }
    }
}

/// Central-difference partial with step `1e-6 * max(1, |x|)`.
pub fn partial(e: &Expr, var: &str, b: &VarBinding) -> Result<f64> {
    let x = b
        .get(var)
        .ok_or_else(|| Error::UnboundVariable(var.to_string()))?;
    let h = 1e-6 * x.abs().max(1.0);
    let mut bb = b.clone();
    bb.set(var, x + h);
    let fp = eval(e, &bb)?;
    bb.set(var, x - h);
    let fm = eval(e, &bb)?;
    Ok((fp - fm) / (2.0 * h))
}

// ---------------------------------------------------------------------------
// Simplifying constructors and the symbolic derivative

/// Constructors that fold constants and strip arithmetic identities as trees
/// are assembled. Derivatives and iterated bracket fields are built through
/// these, which is what keeps repeated differentiation from exploding.
pub mod build {
    use super::{Expr, Func};

    fn num(e: &Expr) -> Option<f64> {
        match e {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (num(&a), num(&b)) {
            (Some(x), Some(y)) if (x + y).is_finite() => return Expr::Num(x + y),
            (Some(x), _) if x == 0.0 => return b,
            (_, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (num(&a), num(&b)) {
            (Some(x), Some(y)) if (x - y).is_finite() => return Expr::Num(x - y),
            (_, Some(y)) if y == 0.0 => return a,
            (Some(x), _) if x == 0.0 => return neg(b),
            _ => {}
        }
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (num(&a), num(&b)) {
            (Some(x), Some(y)) if (x * y).is_finite() => return Expr::Num(x * y),
            (Some(x), _) if x == 0.0 => return Expr::Num(0.0),
            (_, Some(y)) if y == 0.0 => return Expr::Num(0.0),
            (Some(x), _) if x == 1.0 => return b,
            (_, Some(y)) if y == 1.0 => return a,
            _ => {}
        }
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (num(&a), num(&b)) {
            (Some(x), Some(y)) if y != 0.0 && (x / y).is_finite() => return Expr::Num(x / y),
            (Some(x), _) if x == 0.0 => return Expr::Num(0.0),
            (_, Some(y)) if y == 1.0 => return a,
            _ => {}
        }
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        match (num(&a), num(&b)) {
            (Some(x), Some(y)) => {
                let v = x.powf(y);
                if v.is_finite() {
                    return Expr::Num(v);
                }
            }
            (_, Some(y)) if y == 1.0 => return a,
            (_, Some(y)) if y == 0.0 => return Expr::Num(1.0),
            _ => {}
        }
        Expr::Pow(Box::new(a), Box::new(b))
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(inner) => *inner,
            _ => Expr::Neg(Box::new(a)),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }
}

impl Expr {
    /// Exact symbolic partial derivative with respect to `var`.
    pub fn derivative(&self, var: &str) -> Expr {
        use build::*;
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(name) => {
                if name == var {
                    Expr::Num(1.0)
                } else {
                    Expr::Num(0.0)
                }
            }
            Expr::Neg(a) => neg(a.derivative(var)),
            Expr::Add(x, y) => add(x.derivative(var), y.derivative(var)),
            Expr::Sub(x, y) => sub(x.derivative(var), y.derivative(var)),
            Expr::Mul(x, y) => add(
                mul(x.derivative(var), (**y).clone()),
                mul((**x).clone(), y.derivative(var)),
            ),
            Expr::Div(x, y) => div(
                sub(
                    mul(x.derivative(var), (**y).clone()),
                    mul((**x).clone(), y.derivative(var)),
                ),
                pow((**y).clone(), Expr::Num(2.0)),
            ),
            Expr::Pow(f, g) => {
                let fp = f.derivative(var);
                if let Expr::Num(c) = **g {
                    // c * f^(c-1) * f'
                    return mul(
                        mul(Expr::Num(c), pow((**f).clone(), Expr::Num(c - 1.0))),
                        fp,
                    );
                }
                let gp = g.derivative(var);
                // f^g * (g' log f + g f' / f)
                mul(
                    self.clone(),
                    add(
                        mul(gp, call(Func::Log, (**f).clone())),
                        div(mul((**g).clone(), fp), (**f).clone()),
                    ),
                )
            }
            Expr::Call(func, a) => {
                let ap = a.derivative(var);
                let inner = (**a).clone();
                match func {
                    Func::Sin => mul(call(Func::Cos, inner), ap),
                    Func::Cos => neg(mul(call(Func::Sin, inner), ap)),
                    Func::Tan => div(ap, pow(call(Func::Cos, inner), Expr::Num(2.0))),
                    Func::Sqrt => div(ap, mul(Expr::Num(2.0), call(Func::Sqrt, inner))),
                    Func::Exp => mul(call(Func::Exp, inner), ap),
                    Func::Log => div(ap, inner),
                    Func::Abs => mul(div(inner.clone(), call(Func::Abs, inner)), ap),
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Printing

/// Binding strength used by the printer: atoms 5, unary minus 4, `^` 3,
/// `*` `/` 2, `+` `-` 1. A child is parenthesized iff its strength is below
/// the minimum its position requires, which makes printing a fixed point:
/// parsing printed output reproduces the tree.
fn strength(e: &Expr) -> u8 {
    match e {
        Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
        Expr::Neg(_) => 4,
        Expr::Pow(..) => 3,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Add(..) | Expr::Sub(..) => 1,
    }
}

fn write_prec(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    let s = strength(e);
    let paren = s < min;
    if paren {
        write!(f, "(")?;
    }
    match e {
        Expr::Num(v) => write!(f, "{v:?}")?,
        Expr::Var(name) => write!(f, "{name}")?,
        Expr::Neg(a) => {
            write!(f, "-")?;
            write_prec(f, a, 4)?;
        }
        Expr::Pow(a, b) => {
            write_prec(f, a, 4)?;
            write!(f, "^")?;
            write_prec(f, b, 3)?;
        }
        Expr::Mul(a, b) => {
            write_prec(f, a, 2)?;
            write!(f, "*")?;
            write_prec(f, b, 3)?;
        }
        Expr::Div(a, b) => {
            write_prec(f, a, 2)?;
            write!(f, "/")?;
            write_prec(f, b, 3)?;
        }
        Expr::Add(a, b) => {
            write_prec(f, a, 1)?;
            write!(f, "+")?;
            write_prec(f, b, 2)?;
        }
        Expr::Sub(a, b) => {
            write_prec(f, a, 1)?;
            write!(f, "-")?;
            write_prec(f, b, 2)?;
        }
        Expr::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_prec(f, a, 0)?;
            write!(f, ")")?;
        }
    }
    if paren {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_prec(f, self, 0)
    }
}

// ---------------------------------------------------------------------------
