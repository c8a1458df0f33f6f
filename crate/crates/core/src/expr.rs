//! Closed-form scalar fields `f(x, y)` written as text, e.g.
//! `1 + 0.5*exp(-50*((x-0.5)^2 + (y-0.5)^2))`.
//!
//! Grammar: `+ - * / ^` with the usual precedence (`^` binds tighter than
//! unary minus and is right associative), parentheses, numbers, the
//! variables `x`, `y`, the constants `pi`, `e`, and the functions `exp`,
//! `ln`/`log`, `sqrt`, `sin`, `cos`, `tan`, `tanh`, `abs` (one argument),
//! `min`, `max` (two arguments).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Tanh,
    Abs,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "ln" | "log" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "tanh" => (Func::Tanh, 1),
            "abs" => (Func::Abs, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

/// A parsed expression in `x` and `y`. Serializes as its source text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser { src: source, chars: source.char_indices().collect(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self { source: source.to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        eval(&self.root, x, y)
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl TryFrom<String> for Expr {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.source
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn eval(n: &Node, x: f64, y: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::X => x,
        Node::Y => y,
        Node::Neg(a) => -eval(a, x, y),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x, y), eval(b, x, y));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Pow => a.powf(b),
            }
        }
        Node::Call(f, args) => {
            let a = eval(&args[0], x, y);
            match f {
                Func::Exp => a.exp(),
                Func::Ln => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tan => a.tan(),
                Func::Tanh => a.tanh(),
                Func::Abs => a.abs(),
                Func::Min => a.min(eval(&args[1], x, y)),
                Func::Max => a.max(eval(&args[1], x, y)),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Expression { expr: self.src.to_string(), column: self.pos + 1, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].1.is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some('+') => Op::Add,
                Some('-') => Op::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some('*') => Op::Mul,
                Some('/') => Op::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => Err(self.error(&format!("unexpected character {c:?}"))),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let mut end = self.pos;
        let n = self.chars.len();
        while end < n && (self.chars[end].1.is_ascii_digit() || self.chars[end].1 == '.') {
            end += 1;
        }
        if end < n && matches!(self.chars[end].1, 'e' | 'E') {
            let mut k = end + 1;
            if k < n && matches!(self.chars[k].1, '+' | '-') {
                k += 1;
            }
            if k < n && self.chars[k].1.is_ascii_digit() {
                while k < n && self.chars[k].1.is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let text: String = self.chars[start..end].iter().map(|c| c.1).collect();
        let v = text.parse::<f64>().map_err(|_| self.error(&format!("bad number {text:?}")))?;
        self.pos = end;
        Ok(Node::Num(v))
    }

    fn identifier(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].1.is_ascii_alphanumeric() || self.chars[self.pos].1 == '_')
        {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
        match name.as_str() {
            "x" => return Ok(Node::X),
            "y" => return Ok(Node::Y),
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            "e" => return Ok(Node::Num(std::f64::consts::E)),
            _ => {}
        }
        let Some((func, arity)) = Func::lookup(&name) else {
            self.pos = start;
            return Err(self.error(&format!("unknown name {name:?}")));
        };
        if !self.eat('(') {
            return Err(self.error(&format!("expected '(' after {name}")));
        }
        let mut args = vec![self.expr()?];
        while self.eat(',') {
            args.push(self.expr()?);
        }
        if !self.eat(')') {
            return Err(self.error("expected ')'"));
        }
        if args.len() != arity {
            return Err(self.error(&format!("{name} takes {arity} argument(s), got {}", args.len())));
        }
        Ok(Node::Call(func, args))
    }
}
