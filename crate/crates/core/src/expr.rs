//! Closed-form expression language for scalar functions of (t, q, p).
//!
//! Grammar: infix `+ - * / ^` with the usual precedence (`^` binds tightest,
//! right-associative), parentheses, unary minus, numeric literals, `pi`,
//! the variables `t`, `q1..qn`, `p1..pn`, the functions `sin cos exp abs sqrt`,
//! and `pnorm()` for the Euclidean norm of the momentum vector.
//!
//! Expressions are parsed once against a fixed dimension and then evaluated
//! many times in inner loops, so evaluation allocates nothing.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("parse error at column {col}: {msg}")]
    Parse { col: usize, msg: String },
    #[error("unknown identifier `{name}` at column {col} (dim = {dim})")]
    UnknownIdent { name: String, col: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num(f64),
    Ident(usize, usize), // byte range into the source
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    T,
    Q(usize),
    P(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    Neg(Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Exp(Box<Node>),
    Abs(Box<Node>),
    Sqrt(Box<Node>),
    PNorm,
}

/// A parsed expression, bound to a fixed spatial dimension.
#[derive(Clone)]
pub struct Expr {
    root: Node,
    dim: usize,
    uses_t: bool,
    source: String,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?}, dim={})", self.source, self.dim)
    }
}

impl Expr {
    pub fn parse(source: &str, dim: usize) -> Result<Self, ExprError> {
        let mut p = Parser::new(source, dim)?;
        let root = p.expression(0)?;
        p.expect_end()?;
        Ok(Expr { root, dim, uses_t: p.uses_t, source: source.to_string() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether the source mentions `t` at all.
    pub fn uses_t(&self) -> bool {
        self.uses_t
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, t: f64, q: &[f64], p: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        debug_assert_eq!(p.len(), self.dim);
        eval_node(&self.root, t, q, p)
    }
}

fn eval_node(n: &Node, t: f64, q: &[f64], p: &[f64]) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::T => t,
        Node::Q(i) => q[*i],
        Node::P(i) => p[*i],
        Node::Add(a, b) => eval_node(a, t, q, p) + eval_node(b, t, q, p),
        Node::Sub(a, b) => eval_node(a, t, q, p) - eval_node(b, t, q, p),
        Node::Mul(a, b) => eval_node(a, t, q, p) * eval_node(b, t, q, p),
        Node::Div(a, b) => eval_node(a, t, q, p) / eval_node(b, t, q, p),
        Node::Pow(a, b) => eval_node(a, t, q, p).powf(eval_node(b, t, q, p)),
        Node::PowI(a, k) => eval_node(a, t, q, p).powi(*k),
        Node::Neg(a) => -eval_node(a, t, q, p),
        Node::Sin(a) => eval_node(a, t, q, p).sin(),
        Node::Cos(a) => eval_node(a, t, q, p).cos(),
        Node::Exp(a) => eval_node(a, t, q, p).exp(),
        Node::Abs(a) => eval_node(a, t, q, p).abs(),
        Node::Sqrt(a) => eval_node(a, t, q, p).sqrt(),
        Node::PNorm => p.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>, // token + starting column (1-based)
    pos: usize,
    dim: usize,
    uses_t: bool,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, dim: usize) -> Result<Self, ExprError> {
        let toks = lex(src)?;
        Ok(Parser { src, toks, pos: 0, dim, uses_t: false })
    }

    fn peek(&self) -> (Tok, usize) {
        self.toks[self.pos]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect_end(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            (Tok::End, _) => Ok(()),
            (_, col) => Err(ExprError::Parse { col, msg: "trailing input".into() }),
        }
    }

    // Precedence-climbing: 0 = additive, 1 = multiplicative, 2 = power.
    fn expression(&mut self, min_prec: u8) -> Result<Node, ExprError> {
        let mut lhs = self.atom()?;
        loop {
            let (tok, _) = self.peek();
            let (prec, right_assoc) = match tok {
                Tok::Plus | Tok::Minus => (0u8, false),
                Tok::Star | Tok::Slash => (1, false),
                Tok::Caret => (2, true),
                _ => break,
            };
            if prec < min_prec {
                break;
            }
            self.bump();
            let next_min = if right_assoc { prec } else { prec + 1 };
            let rhs = self.expression(next_min)?;
            lhs = match tok {
                Tok::Plus => Node::Add(Box::new(lhs), Box::new(rhs)),
                Tok::Minus => Node::Sub(Box::new(lhs), Box::new(rhs)),
                Tok::Star => Node::Mul(Box::new(lhs), Box::new(rhs)),
                Tok::Slash => Node::Div(Box::new(lhs), Box::new(rhs)),
                Tok::Caret => make_pow(lhs, rhs),
                _ => unreachable!(),
            };
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let (tok, col) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::Minus => Ok(Node::Neg(Box::new(self.expression(2)?))),
            Tok::Plus => self.atom(),
            Tok::LParen => {
                let inner = self.expression(0)?;
                match self.bump() {
                    (Tok::RParen, _) => Ok(inner),
                    (_, c) => Err(ExprError::Parse { col: c, msg: "expected `)`".into() }),
                }
            }
            Tok::Ident(a, b) => self.ident(&self.src[a..b], col),
            Tok::RParen => Err(ExprError::Parse { col, msg: "unexpected `)`".into() }),
            Tok::Caret | Tok::Star | Tok::Slash => {
                Err(ExprError::Parse { col, msg: "operator needs a left operand".into() })
            }
            Tok::End => Err(ExprError::Parse { col, msg: "unexpected end of input".into() }),
        }
    }

    fn ident(&mut self, name: &str, col: usize) -> Result<Node, ExprError> {
        match name {
            "pi" => return Ok(Node::Const(std::f64::consts::PI)),
            "t" => {
                self.uses_t = true;
                return Ok(Node::T);
            }
            _ => {}
        }
        if let Some(fun) = match name {
            "sin" | "cos" | "exp" | "abs" | "sqrt" => Some(name.to_string()),
            _ => None,
        } {
            let arg = self.call_arg(col)?;
            return Ok(match fun.as_str() {
                "sin" => Node::Sin(Box::new(arg)),
                "cos" => Node::Cos(Box::new(arg)),
                "exp" => Node::Exp(Box::new(arg)),
                "abs" => Node::Abs(Box::new(arg)),
                _ => Node::Sqrt(Box::new(arg)),
            });
        }
        if name == "pnorm" {
            match (self.bump(), self.bump()) {
                ((Tok::LParen, _), (Tok::RParen, _)) => return Ok(Node::PNorm),
                ((_, c), _) => {
                    return Err(ExprError::Parse { col: c, msg: "pnorm takes no arguments: pnorm()".into() })
                }
            }
        }
        if let Some(rest) = name.strip_prefix('q') {
            if let Ok(i) = rest.parse::<usize>() {
                if i >= 1 && i <= self.dim {
                    return Ok(Node::Q(i - 1));
                }
            }
        }
        if let Some(rest) = name.strip_prefix('p') {
            if let Ok(i) = rest.parse::<usize>() {
                if i >= 1 && i <= self.dim {
                    return Ok(Node::P(i - 1));
                }
            }
        }
        Err(ExprError::UnknownIdent { name: name.into(), col, dim: self.dim })
    }

    fn call_arg(&mut self, col: usize) -> Result<Node, ExprError> {
        match self.bump() {
            (Tok::LParen, _) => {
                let arg = self.expression(0)?;
                match self.bump() {
                    (Tok::RParen, _) => Ok(arg),
                    (_, c) => Err(ExprError::Parse { col: c, msg: "expected `)`".into() }),
                }
            }
            _ => Err(ExprError::Parse { col, msg: "function call needs parentheses".into() }),
        }
    }
}

fn make_pow(base: Node, exponent: Node) -> Node {
    if let Node::Const(c) = exponent {
        if c.fract() == 0.0 && c.abs() <= 64.0 {
            return Node::PowI(Box::new(base), c as i32);
        }
    }
    Node::Pow(Box::new(base), Box::new(exponent))
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = i + 1;
        match c {
            ' ' | '\t' => {
                i += 1;
            }
            '+' => {
                toks.push((Tok::Plus, col));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, col));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, col));
                i += 1;
            }
            '/' => {
                toks.push((Tok::Slash, col));
                i += 1;
            }
            '^' => {
                toks.push((Tok::Caret, col));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, col));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, col));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // scientific suffix
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| ExprError::Parse { col, msg: format!("bad number `{text}`") })?;
                toks.push((Tok::Num(v), col));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(start, i), col));
            }
            _ => {
                return Err(ExprError::Parse { col, msg: format!("unexpected character `{c}`") });
            }
        }
    }
    toks.push((Tok::End, src.len() + 1));
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_expression() {
        let e = Expr::parse("0.5*p1^2 + cos(2*pi*q1)", 1).unwrap();
        assert!(!e.uses_t());
        let v = e.eval(0.0, &[0.25], &[2.0]);
        assert!((v - 2.0).abs() < 1e-15, "{v}");
        let v = e.eval(0.0, &[0.0], &[0.0]);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_unary() {
        let e = Expr::parse("-2^2 + 3*4", 1).unwrap();
        // `-` applies to 2^2, so -4 + 12 = 8.
        assert_eq!(e.eval(0.0, &[0.0], &[0.0]), 8.0);
        let e = Expr::parse("2^3^2", 1).unwrap(); // right-assoc: 2^9
        assert_eq!(e.eval(0.0, &[0.0], &[0.0]), 512.0);
    }

    #[test]
    fn pnorm_and_dims() {
        let e = Expr::parse("pnorm()^2 / 2 + q2", 2).unwrap();
        let v = e.eval(0.0, &[0.0, 0.25], &[3.0, 4.0]);
        assert!((v - 12.75).abs() < 1e-12);
        assert!(matches!(
            Expr::parse("q3", 2),
            Err(ExprError::UnknownIdent { .. })
        ));
    }

    #[test]
    fn error_positions() {
        let err = Expr::parse("1 + ", 1).unwrap_err();
        assert!(matches!(err, ExprError::Parse { .. }));
        let err = Expr::parse("sin 3", 1).unwrap_err();
        match err {
            ExprError::Parse { col, .. } => assert_eq!(col, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn time_dependence_detected() {
        assert!(Expr::parse("sin(2*pi*t)*p1", 1).unwrap().uses_t());
    }
}
