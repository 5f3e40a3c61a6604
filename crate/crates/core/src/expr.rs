//! Arithmetic expressions in `t`, `x`, `y` used by scenario configs.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numeric literals, the
//! constants `pi` and `e`, and one-argument functions `sin cos tan exp log
//! sqrt abs tanh sinh cosh`, plus `pos` (positive part)
//! and `step` (1 for positive arguments, else 0).

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(fn(f64) -> f64, Box<Node>),
}

/// A parsed expression; evaluate with [`Expr::eval`].
#[derive(Clone, Debug)]
pub struct Expr {
    source: String,
    root: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

const VARS: [&str; 3] = ["t", "x", "y"];

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = lex(src)?;
        let mut p = Parser { toks: &tokens, pos: 0, src };
        let root = p.sum()?;
        if p.pos != tokens.len() {
            return Err(p.err(format!("unexpected token {:?}", tokens[p.pos])));
        }
        Ok(Self {
            source: src.trim().to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, t: f64, x: f64, y: f64) -> f64 {
        eval(&self.root, &[t, x, y])
    }

    /// True when the expression does not mention `var`.
    pub fn is_free_of(&self, var: &str) -> bool {
        let Some(idx) = VARS.iter().position(|v| *v == var) else { return true };
        fn walk(n: &Node, idx: usize) -> bool {
            match n {
                Node::Num(_) => true,
                Node::Var(i) => *i != idx,
                Node::Neg(a) | Node::Call(_, a) => walk(a, idx),
                Node::Bin(_, a, b) => walk(a, idx) && walk(b, idx),
            }
        }
        walk(&self.root, idx)
    }
}

fn eval(n: &Node, env: &[f64; 3]) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(i) => env[*i],
        Node::Neg(a) => -eval(a, env),
        Node::Call(f, a) => f(eval(a, env)),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, env), eval(b, env));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let err = |msg: String| Error::Expression {
        expr: src.to_string(),
        msg,
    };
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
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(err(format!("unexpected character `{c}`")));
        }
    }
    if out.is_empty() {
        return Err(err("empty expression".into()));
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn err(&self, msg: String) -> Error {
        Error::Expression {
            expr: self.src.to_string(),
            msg,
        }
    }

    fn peek_op(&self) -> Option<char> {
        match self.toks.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // right associative, binds tighter than unary minus on its left
    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self.toks.get(self.pos).cloned().ok_or_else(|| self.err("unexpected end".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Op('(') => {
                let inner = self.sum()?;
                if self.peek_op() != Some(')') {
                    return Err(self.err("missing `)`".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(i) = VARS.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                match name.as_str() {
                    "pi" => return Ok(Node::Num(std::f64::consts::PI)),
                    "e" => return Ok(Node::Num(std::f64::consts::E)),
                    _ => {}
                }
                let f: fn(f64) -> f64 = match name.as_str() {
                    "sin" => f64::sin,
                    "cos" => f64::cos,
                    "tan" => f64::tan,
                    "exp" => f64::exp,
                    "log" => f64::ln,
                    "sqrt" => f64::sqrt,
                    "abs" => f64::abs,
                    "tanh" => f64::tanh,
                    "sinh" => f64::sinh,
                    "cosh" => f64::cosh,
                    "pos" => |v: f64| v.max(0.0),
                    "step" => |v: f64| if v > 0.0 { 1.0 } else { 0.0 },
                    _ => return Err(self.err(format!("unknown name `{name}`"))),
                };
                if self.peek_op() != Some('(') {
                    return Err(self.err(format!("`{name}` needs a parenthesized argument")));
                }
                self.pos += 1;
                let arg = self.sum()?;
                if self.peek_op() != Some(')') {
                    return Err(self.err("missing `)`".into()));
                }
                self.pos += 1;
                Ok(Node::Call(f, Box::new(arg)))
            }
            Tok::Op(c) => Err(self.err(format!("unexpected `{c}`"))),
        }
    }
}
