//! Closed arithmetic expressions in the spatial coordinates `x1, x2, x3` and
//! time `t`.
//!
//! Grammar (usual precedence, `^` binds tightest and associates right):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `sin cos exp sqrt` (one argument) and `min max` (two).
//! Constants: `pi`, `e`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Coord(usize),
    Time,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn eval(&self, x: &[f64; 3], t: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Coord(a) => x[*a],
            Node::Time => t,
            Node::Neg(a) => -a.eval(x, t),
            Node::Add(a, b) => a.eval(x, t) + b.eval(x, t),
            Node::Sub(a, b) => a.eval(x, t) - b.eval(x, t),
            Node::Mul(a, b) => a.eval(x, t) * b.eval(x, t),
            Node::Div(a, b) => a.eval(x, t) / b.eval(x, t),
            Node::Pow(a, b) => math::powf(a.eval(x, t), b.eval(x, t)),
            Node::Call(f, args) => {
                let a = args[0].eval(x, t);
                match f {
                    Func::Sin => math::sin(a),
                    Func::Cos => math::cos(a),
                    Func::Exp => math::exp(a),
                    Func::Sqrt => math::sqrt(a),
                    Func::Min => a.min(args[1].eval(x, t)),
                    Func::Max => a.max(args[1].eval(x, t)),
                }
            }
        }
    }

    fn uses_time(&self) -> bool {
        match self {
            Node::Time => true,
            Node::Num(_) | Node::Coord(_) => false,
            Node::Neg(a) => a.uses_time(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.uses_time() || b.uses_time()
            }
            Node::Call(_, args) => args.iter().any(Node::uses_time),
        }
    }

    fn max_coord(&self) -> Option<usize> {
        match self {
            Node::Coord(a) => Some(*a),
            Node::Num(_) | Node::Time => None,
            Node::Neg(a) => a.max_coord(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.max_coord().max(b.max_coord())
            }
            Node::Call(_, args) => args.iter().filter_map(Node::max_coord).max(),
        }
    }
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    source: String,
    root: Node,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Expression> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(parse_error(tok.offset, "unexpected trailing input"));
        }
        Ok(Expression {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: &[f64; 3], t: f64) -> f64 {
        self.root.eval(x, t)
    }

    pub fn eval_space(&self, x: &[f64; 3]) -> f64 {
        self.root.eval(x, 0.0)
    }

    pub fn uses_time(&self) -> bool {
        self.root.uses_time()
    }

    /// Number of spatial axes referenced (`x3` -> 3).
    pub fn spatial_arity(&self) -> usize {
        self.root.max_coord().map_or(0, |a| a + 1)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn parse_error(offset: usize, message: &str) -> Error {
    Error::Parse {
        offset,
        message: message.to_string(),
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| parse_error(start, &format!("bad number '{text}'")))?;
            out.push(Token { tok: Tok::Num(v), offset: start });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                offset: start,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token { tok: Tok::Sym(c), offset: i });
            i += 1;
        } else {
            return Err(parse_error(i, &format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek_sym(&self, c: char) -> bool {
        matches!(self.tokens.get(self.pos), Some(Token { tok: Tok::Sym(s), .. }) if *s == c)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map_or_else(|| self.tokens.last().map_or(0, |t| t.offset + 1), |t| t.offset)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_sym(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(parse_error(self.offset(), &format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.peek_sym('+') {
                self.pos += 1;
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.peek_sym('-') {
                self.pos += 1;
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.peek_sym('*') {
                self.pos += 1;
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.peek_sym('/') {
                self.pos += 1;
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_sym('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.peek_sym('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.peek_sym('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node> {
        let offset = self.offset();
        let token = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| parse_error(offset, "unexpected end of expression"))?;
        self.pos += 1;
        match token.tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Sym('(') => {
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Sym(c) => Err(parse_error(token.offset, &format!("unexpected '{c}'"))),
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "pi" => return Ok(Node::Num(core::f64::consts::PI)),
                    "e" => return Ok(Node::Num(core::f64::consts::E)),
                    "t" => return Ok(Node::Time),
                    "x1" => return Ok(Node::Coord(0)),
                    "x2" => return Ok(Node::Coord(1)),
                    "x3" => return Ok(Node::Coord(2)),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "sqrt" => Func::Sqrt,
                    "min" => Func::Min,
                    "max" => Func::Max,
                    other => {
                        return Err(parse_error(token.offset, &format!("unknown identifier '{other}'")))
                    }
                };
                self.expect('(')?;
                let mut args = alloc::vec![self.expr()?];
                while self.peek_sym(',') {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(')')?;
                if args.len() != func.arity() {
                    return Err(parse_error(
                        token.offset,
                        &format!("'{name}' takes {} argument(s), got {}", func.arity(), args.len()),
                    ));
                }
                Ok(Node::Call(func, args))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: [f64; 3], t: f64) -> f64 {
        Expression::parse(s).unwrap().eval(&x, t)
    }

    #[test]
    fn precedence_and_associativity() {
        let o = [0.0; 3];
        assert_eq!(ev("1 + 2 * 3", o, 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", o, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", o, 0.0), -4.0);
        assert_eq!(ev("2 ^ -1", o, 0.0), 0.5);
        assert_eq!(ev("(1 + 2) * 3 - 4 / 2", o, 0.0), 7.0);
        assert_eq!(ev("1.5e1 + 2E-1", o, 0.0), 15.2);
    }

    #[test]
    fn variables_and_functions() {
        let x = [0.5, 2.0, 3.0];
        assert!((ev("1 + 0.5*sin(pi*x1)", x, 0.0) - 1.5).abs() < 1e-15);
        assert_eq!(ev("x2 * x3 + t", x, 4.0), 10.0);
        assert_eq!(ev("min(t, 1) * max(x1, x2)", x, 3.0), 2.0);
        assert!((ev("exp(1) - e", x, 0.0)).abs() < 1e-15);
        assert_eq!(ev("sqrt(16) + cos(0)", x, 0.0), 5.0);
        assert!(Expression::parse("t*x1").unwrap().uses_time());
        assert!(!Expression::parse("x1").unwrap().uses_time());
        assert_eq!(Expression::parse("x3 + x1").unwrap().spatial_arity(), 3);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        for (src, off) in [("1 +", 3), ("foo(1)", 0), ("sin(1, 2)", 0), ("2 $ 3", 2), ("(1", 2), ("1 2", 2)] {
            match Expression::parse(src) {
                Err(Error::Parse { offset, .. }) => assert_eq!(offset, off, "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }
}
