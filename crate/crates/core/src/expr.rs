//! Tiny arithmetic expression language used for kernel modulations and
//! initial-data profiles.
//!
//! Grammar (left associative, usual precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | variable | 'pi' | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! Variables are `x`, `y` (first coordinate) and `x1`, `x2`, `y1`, `y2`.
//! Functions: `sin`, `cos`, `exp`, `log`, `sqrt`, `abs`, `tanh`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at offset {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unknown name '{name}' at offset {pos}")]
    UnknownVariable { name: String, pos: usize },
    #[error("malformed number '{text}' at offset {pos}")]
    BadNumber { text: String, pos: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token at offset {pos}")]
    UnexpectedToken { pos: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Var {
    X(usize),
    Y(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "log" => Self::Log,
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            "tanh" => Self::Tanh,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Self::Sin => v.sin(),
            Self::Cos => v.cos(),
            Self::Exp => v.exp(),
            Self::Log => v.ln(),
            Self::Sqrt => v.sqrt(),
            Self::Abs => v.abs(),
            Self::Tanh => v.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// A parsed expression over the coordinates of two points `x` and `y`.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
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
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        match ch {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((Tok::Plus, i));
                i += 1
            }
            '-' => {
                out.push((Tok::Minus, i));
                i += 1
            }
            '*' => {
                out.push((Tok::Star, i));
                i += 1
            }
            '/' => {
                out.push((Tok::Slash, i));
                i += 1
            }
            '^' => {
                out.push((Tok::Caret, i));
                i += 1
            }
            '(' => {
                out.push((Tok::LParen, i));
                i += 1
            }
            ')' => {
                out.push((Tok::RParen, i));
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                    i += 1;
                }
                // exponent part
                if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = bytes[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| ExprError::BadNumber { text: text.clone(), pos: start })?;
                out.push((Tok::Num(v), start));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push((Tok::Ident(bytes[start..i].iter().collect()), start));
            }
            other => return Err(ExprError::UnexpectedChar { ch: other, pos: i }),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(usize::MAX)
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => Op::Add,
                Some(Tok::Minus) => Op::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => Op::Mul,
                Some(Tok::Slash) => Op::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if let Some(Tok::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn parenthesized(&mut self) -> Result<Node, ExprError> {
        let inner = self.expr()?;
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                Ok(inner)
            }
            Some(_) => Err(ExprError::UnexpectedToken { pos: self.offset() }),
            None => Err(ExprError::UnexpectedEnd),
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let pos = self.offset();
        let tok = self.toks.get(self.pos).cloned().ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        match tok.0 {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    return match self.peek() {
                        Some(Tok::LParen) => {
                            self.pos += 1;
                            Ok(Node::Call(f, Box::new(self.parenthesized()?)))
                        }
                        Some(_) => Err(ExprError::UnexpectedToken { pos: self.offset() }),
                        None => Err(ExprError::UnexpectedEnd),
                    };
                }
                if name == "pi" {
                    return Ok(Node::Const(std::f64::consts::PI));
                }
                let var = match name.as_str() {
                    "x" | "x1" => Var::X(0),
                    "x2" => Var::X(1),
                    "y" | "y1" => Var::Y(0),
                    "y2" => Var::Y(1),
                    _ => return Err(ExprError::UnknownVariable { name, pos }),
                };
                Ok(Node::Var(var))
            }
            Tok::LParen => self.parenthesized(),
            _ => Err(ExprError::UnexpectedToken { pos }),
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let toks = tokenize(src)?;
        if toks.is_empty() {
            return Err(ExprError::UnexpectedEnd);
        }
        let mut p = Parser { toks, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(ExprError::UnexpectedToken { pos: p.offset() });
        }
        Ok(Self { source: src.trim().to_string(), root })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates the expression. Missing coordinates read as zero.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        eval_node(&self.root, x, y)
    }

    /// True when the expression refers to any `y` coordinate.
    pub fn uses_y(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Const(_) => false,
                Node::Var(Var::Y(_)) => true,
                Node::Var(Var::X(_)) => false,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Bin(_, a, b) => walk(a) || walk(b),
            }
        }
        walk(&self.root)
    }
}

fn eval_node(n: &Node, x: &[f64], y: &[f64]) -> f64 {
    match n {
        Node::Const(v) => *v,
        Node::Var(Var::X(i)) => x.get(*i).copied().unwrap_or(0.0),
        Node::Var(Var::Y(i)) => y.get(*i).copied().unwrap_or(0.0),
        Node::Neg(a) => -eval_node(a, x, y),
        Node::Call(f, a) => f.apply(eval_node(a, x, y)),
        Node::Bin(op, a, b) => {
            let (l, r) = (eval_node(a, x, y), eval_node(b, x, y));
            match op {
                Op::Add => l + r,
                Op::Sub => l - r,
                Op::Mul => l * r,
                Op::Div => l / r,
                Op::Pow => l.powf(r),
            }
        }
    }
}
