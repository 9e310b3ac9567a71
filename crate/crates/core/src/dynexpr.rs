//! Arithmetic expressions over state variables `x1..xn`, used to define
//! update maps in configuration files.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' power)?          exponent: constant integer in [0, 8]
//! atom    := number | var | func '(' sum ')' | '(' sum ')'
//! ```

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` takes exactly one argument, got {got} (byte {offset})")]
    Arity { name: String, got: usize, offset: usize },
    #[error("variable x{index} out of range for a state of dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("non-finite value {value} from `{subexpr}`")]
    NonFinite { subexpr: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        }
    }
}

pub const MAX_EXPONENT: u32 = 8;

/// Expression tree. Variables are 1-based (`Var(1)` is `x1`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
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
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
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
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                // Report the full (possibly multi-byte) character.
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.offset(),
            message: format!("expected {wanted}, found {}", self.peek().describe()),
        }
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let at = self.offset();
        let exponent = self.power()?;
        let bad = || ExprError::Syntax {
            offset: at,
            message: format!("exponent must be a constant integer in [0, {MAX_EXPONENT}]"),
        };
        let value = exponent.constant_value().ok_or_else(bad)?;
        if value.fract() != 0.0 || !(0.0..=MAX_EXPONENT as f64).contains(&value) {
            return Err(bad());
        }
        Ok(Expr::Pow(Box::new(base), value as u32))
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(index) = parse_var(&name) {
                    return Ok(Expr::Var(index));
                }
                let Some(func) = Func::from_name(&name) else {
                    return Err(ExprError::UnknownIdentifier { name, offset: at });
                };
                self.expect(Tok::LParen, "`(` after function name")?;
                if *self.peek() == Tok::RParen {
                    return Err(ExprError::Arity { name, got: 0, offset: at });
                }
                let arg = self.sum()?;
                let mut extra = 0;
                while *self.peek() == Tok::Comma {
                    self.bump();
                    self.sum()?;
                    extra += 1;
                }
                if extra > 0 {
                    return Err(ExprError::Arity { name, got: 1 + extra, offset: at });
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            other => Err(ExprError::Syntax {
                    offset: at,
                message: format!("expected an operand, found {}", other.describe()),
            }),
        }
    }
}

fn parse_var(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse().ok()
}

/// Parses one expression; the whole input must be consumed.
pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let e = p.sum()?;
    if *p.peek() != Tok::Eof {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

/// `v^n` as the left-to-right product `v*v*...*v`, so `x^3` matches `x*x*x`
/// bit for bit (`powi` may associate differently).
fn int_pow(v: f64, n: u32) -> f64 {
    if n == 0 {
        return 1.0;
    }
    (1..n).fold(v, |acc, _| acc * v)
}

impl Expr {
    /// Largest variable index referenced, 0 if none.
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(i) => *i,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_var().max(b.max_var())
            }
        }
    }

    /// Value of a variable-free expression, without finiteness checks.
    fn constant_value(&self) -> Option<f64> {
        Some(match self {
            Expr::Num(v) => *v,
            Expr::Var(_) => return None,
            Expr::Neg(a) => -a.constant_value()?,
            Expr::Add(a, b) => a.constant_value()? + b.constant_value()?,
            Expr::Sub(a, b) => a.constant_value()? - b.constant_value()?,
            Expr::Mul(a, b) => a.constant_value()? * b.constant_value()?,
            Expr::Div(a, b) => a.constant_value()? / b.constant_value()?,
            Expr::Pow(a, n) => int_pow(a.constant_value()?, *n),
            Expr::Call(f, a) => f.apply(a.constant_value()?),
        })
    }

    /// Evaluates at state `x`. Any non-finite intermediate is an error naming
    /// the innermost subexpression that produced it.
    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => *x.get(i.wrapping_sub(1)).ok_or(ExprError::VariableOutOfRange {
                index: *i,
                dim: x.len(),
            })?,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => {
                let l = a.eval(x)?;
                l + b.eval(x)?
            }
            Expr::Sub(a, b) => {
                let l = a.eval(x)?;
                l - b.eval(x)?
            }
            Expr::Mul(a, b) => {
                let l = a.eval(x)?;
                l * b.eval(x)?
            }
            Expr::Div(a, b) => {
                let l = a.eval(x)?;
                l / b.eval(x)?
            }
            Expr::Pow(a, n) => int_pow(a.eval(x)?, *n),
            Expr::Call(f, a) => f.apply(a.eval(x)?),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite {
                subexpr: self.to_string(),
                value: v,
            })
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, min_prec: u8) -> fmt::Result {
    if child.precedence() < min_prec {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, 3)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let p = self.precedence();
                let op = match self {
                    Expr::Add(..) => " + ",
                    Expr::Sub(..) => " - ",
                    Expr::Mul(..) => "*",
                    _ => "/",
                };
                write_child(f, a, p)?;
                f.write_str(op)?;
                // Left associativity: an equal-precedence right child needs parentheses.
                write_child(f, b, p + 1)
            }
            Expr::Pow(a, n) => {
                write_child(f, a, 5)?;
                write!(f, "^{n}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
