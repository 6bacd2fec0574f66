//! Disturbance regressor expressions.
//!
//! Each regressor entry is a product of factors over the state variables:
//!
//! ```text
//! expr   := factor ('*' factor)*
//! factor := number | var | fn '(' expr ')'
//! var    := q1 | q2 | p1 | p2
//! fn     := sin | cos
//! ```
//!
//! Numbers accept an optional leading `-`, a fractional part and an exponent.
//! Extending the language (sums, further functions) means adding a variant to
//! [`Expr`] and a branch to `Parser::factor`.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Q1,
    Q2,
    P1,
    P2,
}

impl Var {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "q1" => Some(Var::Q1),
            "q2" => Some(Var::Q2),
            "p1" => Some(Var::P1),
            "p2" => Some(Var::P2),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Var::Q1 => "q1",
            Var::Q2 => "q2",
            Var::P1 => "p1",
            Var::P2 => "p2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    /// Two or more factors, multiplied left to right.
    Product(Vec<Expr>),
}

impl Expr {
    pub fn eval(&self, s: &State) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Var(Var::Q1) => s.q[0],
            Expr::Var(Var::Q2) => s.q[1],
            Expr::Var(Var::P1) => s.p[0],
            Expr::Var(Var::P2) => s.p[1],
            Expr::Sin(e) => e.eval(s).sin(),
            Expr::Cos(e) => e.eval(s).cos(),
            Expr::Product(fs) => fs.iter().fold(1.0, |acc, f| acc * f.eval(s)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v:?}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Sin(e) => write!(f, "sin({e})"),
            Expr::Cos(e) => write!(f, "cos({e})"),
            Expr::Product(fs) => {
                for (i, x) in fs.iter().enumerate() {
                    if i > 0 {
                        f.write_str("*")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

pub fn parse_expr(text: &str) -> Result<Expr> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("'*' or end of input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, expected: &str) -> Error {
        Error::Parse {
            position: self.pos,
            expected: expected.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("'{}'", b as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut factors = vec![self.factor()?];
        while self.peek() == Some(b'*') {
            self.pos += 1;
            factors.push(self.factor()?);
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Expr::Product(factors)
        })
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b) if b.is_ascii_digit() || b == b'.' || b == b'-' => self.number(),
            Some(b) if b.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                if self.peek() == Some(b'(') {
                    let wrap: fn(Box<Expr>) -> Expr = match name {
                        "sin" => Expr::Sin,
                        "cos" => Expr::Cos,
                        _ => {
                            self.pos = start;
                            return Err(self.error("function sin or cos"));
                        }
                    };
                    self.pos += 1;
                    let inner = self.expr()?;
                    self.expect(b')')?;
                    return Ok(wrap(Box::new(inner)));
                }
                if name == "sin" || name == "cos" {
                    return Err(self.error("'('"));
                }
                Var::from_name(name)
                    .map(Expr::Var)
                    .ok_or_else(|| Error::UnknownVariable {
                        name: name.to_string(),
                        position: start,
                    })
            }
            _ => Err(self.error("number, variable or function")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src;
        let mut i = self.pos;
        if bytes.get(i) == Some(&b'-') {
            i += 1;
        }
        let digits = |i: &mut usize| {
            let s = *i;
            while *i < bytes.len() && bytes[*i].is_ascii_digit() {
                *i += 1;
            }
            *i > s
        };
        let int = digits(&mut i);
        let mut frac = false;
        if bytes.get(i) == Some(&b'.') {
            i += 1;
            frac = digits(&mut i);
        }
        if !int && !frac {
            self.pos = i;
            return Err(self.error("digit"));
        }
        if matches!(bytes.get(i), Some(b'e' | b'E')) {
            let mut j = i + 1;
            if matches!(bytes.get(j), Some(b'+' | b'-')) {
                j += 1;
            }
            if digits(&mut j) {
                i = j;
            } else {
                self.pos = j;
                return Err(self.error("exponent digits"));
            }
        }
        let text = std::str::from_utf8(&bytes[start..i]).unwrap();
        self.pos = i;
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| Error::Parse {
                position: start,
                expected: "number".to_string(),
            })
    }
}

/// Ordered list of regressor entries `f_1..f_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSpec {
    terms: Vec<Expr>,
}

impl RegressorSpec {
    /// Parses one expression per entry. Errors carry the position within the
    /// offending entry; the entry index is reported through `Error::Config` by callers.
    pub fn parse<S: AsRef<str>>(texts: &[S]) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::Parse {
                position: 0,
                expected: "at least one regressor entry".to_string(),
            });
        }
        let terms = texts
            .iter()
            .map(|t| parse_expr(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms })
    }

    pub fn from_terms(terms: Vec<Expr>) -> Self {
        assert!(!terms.is_empty(), "regressor needs at least one entry");
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Expr] {
        &self.terms
    }

    pub fn eval(&self, s: &State) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(s)).collect()
    }

    /// `f(q, p)' theta`
    pub fn dot(&self, s: &State, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.terms.len());
        self.terms
            .iter()
            .zip(theta)
            .map(|(t, th)| t.eval(s) * th)
            .sum()
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.to_string()).collect()
    }
}
