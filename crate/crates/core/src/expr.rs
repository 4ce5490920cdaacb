//! Infix expressions over `x1..xn` with named parameters, compiled to a
//! straight-line tape that evaluates on any [`Scalar`].
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, decimal literals,
//! `pi`, and the functions `sin cos tan exp ln log sqrt tanh atan abs`.
//! `^` is right-associative and binds tighter than unary minus, so
//! `-x1^2 = -(x1^2)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Atan,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Powi(usize, i32),
    Powf(usize, f64),
    Pow(usize, usize),
    Call(Func, usize),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| GeoError::Parse {
                col: start + 1,
                msg: format!("bad number '{text}'"),
            })?;
            out.push((Tok::Num(v), start + 1));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), start + 1));
        } else if "+-*/^(),".contains(c) {
            out.push((Tok::Sym(c), i + 1));
            i += 1;
        } else {
            return Err(GeoError::Parse { col: i + 1, msg: format!("unexpected character '{c}'") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
    params: &'a BTreeMap<String, f64>,
    tape: Vec<Op>,
    end_col: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.1)
    }
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(GeoError::Parse { col: self.col(), msg: msg.into() })
    }
    fn push(&mut self, op: Op) -> usize {
        let args: &[usize] = match &op {
            Op::Const(_) | Op::Var(_) => &[],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Pow(a, b) => &[*a, *b],
            Op::Neg(a) | Op::Powi(a, _) | Op::Powf(a, _) | Op::Call(_, a) => std::slice::from_ref(a),
        };
        if !args.is_empty() && args.iter().all(|&i| self.constant(i).is_some()) {
            let mut tape: Vec<Op> = args.iter().map(|&i| self.tape[i]).collect();
            tape.push(match op {
                Op::Add(..) => Op::Add(0, 1),
                Op::Sub(..) => Op::Sub(0, 1),
                Op::Mul(..) => Op::Mul(0, 1),
                Op::Div(..) => Op::Div(0, 1),
                Op::Pow(..) => Op::Pow(0, 1),
                Op::Neg(_) => Op::Neg(0),
                Op::Powi(_, n) => Op::Powi(0, n),
                Op::Powf(_, p) => Op::Powf(0, p),
                Op::Call(f, _) => Op::Call(f, 0),
                other => other,
            });
            let v = Expr { source: String::new(), dim: 0, params: BTreeMap::new(), tape }.eval::<f64>(&[]);
            self.tape.push(Op::Const(v));
        } else {
            self.tape.push(op);
        }
        self.tape.len() - 1
    }
    fn constant(&self, i: usize) -> Option<f64> {
        match self.tape[i] {
            Op::Const(c) => Some(c),
            _ => None,
        }
    }
    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<usize> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                let rhs = self.term()?;
                lhs = self.push(Op::Add(lhs, rhs));
            } else if self.eat('-') {
                let rhs = self.term()?;
                lhs = self.push(Op::Sub(lhs, rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<usize> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                let rhs = self.unary()?;
                lhs = self.push(Op::Mul(lhs, rhs));
            } else if self.eat('/') {
                let rhs = self.unary()?;
                lhs = self.push(Op::Div(lhs, rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<usize> {
        if self.eat('-') {
            let a = self.unary()?;
            return Ok(self.push(Op::Neg(a)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<usize> {
        let base = self.atom()?;
        if !self.eat('^') {
            return Ok(base);
        }
        let exp = self.unary()?;
        Ok(match self.constant(exp) {
            Some(p) if p == p.round() && p.abs() <= 64.0 => self.push(Op::Powi(base, p as i32)),
            Some(p) => self.push(Op::Powf(base, p)),
            None => self.push(Op::Pow(base, exp)),
        })
    }

    fn atom(&mut self) -> Result<usize> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(self.push(Op::Const(v)))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat('(') {
                    let f = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "tan" => Func::Tan,
                        "exp" => Func::Exp,
                        "ln" | "log" => Func::Ln,
                        "sqrt" => Func::Sqrt,
                        "tanh" => Func::Tanh,
                        "atan" => Func::Atan,
                        "abs" => Func::Abs,
                        _ => return Err(GeoError::Parse { col, msg: format!("unknown function '{name}'") }),
                    };
                    let a = self.expr()?;
                    if !self.eat(')') {
                        return self.err("expected ')' after function argument");
                    }
                    return Ok(self.push(Op::Call(f, a)));
                }
                if let Some(v) = self.params.get(&name) {
                    return Ok(self.push(Op::Const(*v)));
                }
                if name == "pi" {
                    return Ok(self.push(Op::Const(std::f64::consts::PI)));
                }
                if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                    if idx >= 1 && idx <= self.dim {
                        return Ok(self.push(Op::Var(idx - 1)));
                    }
                    return Err(GeoError::Parse {
                        col,
                        msg: format!("variable '{name}' out of range x1..x{}", self.dim),
                    });
                }
                Err(GeoError::Parse { col, msg: format!("unknown identifier '{name}'") })
            }
            Some(Tok::Sym(c)) => self.err(format!("unexpected '{c}'")),
            None => self.err("unexpected end of expression"),
        }
    }
}

/// A compiled scalar expression in `dim` variables.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ExprSource", into = "ExprSource")]
pub struct Expr {
    source: String,
    dim: usize,
    params: BTreeMap<String, f64>,
    tape: Vec<Op>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExprSource {
    pub source: String,
    pub dim: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl TryFrom<ExprSource> for Expr {
    type Error = GeoError;
    fn try_from(s: ExprSource) -> Result<Self> {
        Expr::parse(&s.source, s.dim, &s.params)
    }
}

impl From<Expr> for ExprSource {
    fn from(e: Expr) -> Self {
        ExprSource { source: e.source, dim: e.dim, params: e.params }
    }
}

impl Expr {
    pub fn parse(source: &str, dim: usize, params: &BTreeMap<String, f64>) -> Result<Self> {
        let toks = tokenize(source)?;
        let mut p = Parser {
            toks,
            pos: 0,
            dim,
            params,
            tape: Vec::new(),
            end_col: source.chars().count() + 1,
        };
        p.expr()?;
        if p.pos != p.toks.len() {
            return p.err("trailing input");
        }
        Ok(Expr { source: source.to_string(), dim, params: params.clone(), tape: p.tape })
    }

    /// Parses an expression without parameters.
    pub fn new(source: &str, dim: usize) -> Result<Self> {
        Self::parse(source, dim, &BTreeMap::new())
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        let mut r: Vec<T> = Vec::with_capacity(self.tape.len());
        for op in &self.tape {
            let v = match *op {
                Op::Const(c) => T::cst(c),
                Op::Var(i) => x[i],
                Op::Add(a, b) => r[a] + r[b],
                Op::Sub(a, b) => r[a] - r[b],
                Op::Mul(a, b) => r[a] * r[b],
                Op::Div(a, b) => r[a] / r[b],
                Op::Neg(a) => -r[a],
                Op::Powi(a, n) => r[a].powi(n),
                Op::Powf(a, p) => r[a].powf(p),
                Op::Pow(a, b) => (r[b] * r[a].ln()).exp(),
                Op::Call(f, a) => {
                    let v = r[a];
                    match f {
                        Func::Sin => v.sin(),
                        Func::Cos => v.cos(),
                        Func::Tan => v.sin() / v.cos(),
                        Func::Exp => v.exp(),
                        Func::Ln => v.ln(),
                        Func::Sqrt => v.sqrt(),
                        Func::Tanh => v.tanh(),
                        Func::Atan => v.atan(),
                        Func::Abs => v.abs(),
                    }
                }
            };
            r.push(v);
        }
        *r.last().expect("parser never produces an empty tape")
    }
}
