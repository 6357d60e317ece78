//! Tokenizer and precedence-climbing parser for coefficient expressions.
//!
//! | level | operators            | associativity |
//! |-------|----------------------|---------------|
//! | 1     | `+` `-` (binary)     | left          |
//! | 2     | `*` `/`              | left          |
//! | 3     | `-` (unary)          | prefix        |
//! | 4     | `^`                  | right         |

use super::{BinOp, Checkerboard, Expr, ExprKind, Func, ParseError, Span, Var};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
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
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ParseError::InvalidNumber { offset: start, text: text.to_string() })?;
                out.push(Token { tok: Tok::Num(v), start, end: i });
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(src[start..i].to_string()), start, end: i });
                continue;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::UnexpectedChar { offset: start, ch });
            }
        };
        i += 1;
        out.push(Token { tok, start, end: i });
    }
    out.push(Token { tok: Tok::End, start: src.len(), end: src.len() });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

fn binary_precedence(tok: &Tok) -> Option<(BinOp, u8)> {
    match tok {
        Tok::Op('+') => Some((BinOp::Add, 1)),
        Tok::Op('-') => Some((BinOp::Sub, 1)),
        Tok::Op('*') => Some((BinOp::Mul, 2)),
        Tok::Op('/') => Some((BinOp::Div, 2)),
        _ => None,
    }
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let t = self.peek();
        ParseError::Unexpected { offset: t.start, expected: expected.to_string(), found: t.tok.describe() }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Token, ParseError> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn expr(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((op, prec)) = binary_precedence(&self.peek().tok) {
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.expr(prec + 1)?;
            let span = Span::new(lhs.span.start, rhs.span.end);
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Op('-') {
            let start = self.bump().start;
            let inner = self.unary()?;
            let span = Span::new(start, inner.span.end);
            return Ok(Expr::new(ExprKind::Neg(Box::new(inner)), span));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek().tok == Tok::Op('^') {
            self.bump();
            // Right associative, and the exponent may carry its own sign.
            let exp = self.unary()?;
            let span = Span::new(base.span.start, exp.span.end);
            return Ok(Expr::new(ExprKind::Binary(BinOp::Pow, Box::new(base), Box::new(exp)), span));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::Num(v), Span::new(t.start, t.end)))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr(1)?;
                let close = self.expect(Tok::RParen, "`)`")?;
                Ok(Expr { span: Span::new(t.start, close.end), ..inner })
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek().tok == Tok::LParen {
                    self.call(&name, t.start)
                } else {
                    let kind = match name.as_str() {
                        "x" => ExprKind::Var(Var::X),
                        "y" => ExprKind::Var(Var::Y),
                        "t" => ExprKind::Var(Var::T),
                        "pi" => ExprKind::Num(std::f64::consts::PI),
                        _ => return Err(ParseError::UnknownIdentifier { offset: t.start, name }),
                    };
                    Ok(Expr::new(kind, Span::new(t.start, t.end)))
                }
            }
            _ => Err(self.unexpected("an expression")),
        }
    }

    fn call(&mut self, name: &str, start: usize) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                args.push(self.expr(1)?);
                if self.peek().tok == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        let close = self.expect(Tok::RParen, "`,` or `)`")?;
        let span = Span::new(start, close.end);
        if name == "checkerboard" {
            return checkerboard_node(args, span);
        }
        let func = Func::from_name(name).ok_or_else(|| ParseError::UnknownIdentifier { offset: start, name: name.to_string() })?;
        if args.len() != func.arity() {
            return Err(ParseError::Arity { offset: start, name: name.to_string(), expected: func.arity(), got: args.len() });
        }
        Ok(Expr::new(ExprKind::Call(func, args), span))
    }
}

fn checkerboard_node(args: Vec<Expr>, span: Span) -> Result<Expr, ParseError> {
    if args.len() != 6 {
        return Err(ParseError::Arity { offset: span.start, name: "checkerboard".into(), expected: 6, got: args.len() });
    }
    let mut vals = [0.0; 6];
    for (v, a) in vals.iter_mut().zip(&args) {
        *v = a.constant_value().ok_or(ParseError::NonConstantArgument { offset: a.span.start, name: "checkerboard".into() })?;
    }
    let [seed, sx, sy, st, lo, hi] = vals;
    let bad = |what: &str| ParseError::InvalidArgument { offset: span.start, message: format!("checkerboard: {what}") };
    if seed < 0.0 || seed.fract() != 0.0 || seed > u32::MAX as f64 {
        return Err(bad("seed must be a non-negative integer"));
    }
    if !(sx > 0.0 && sy > 0.0 && st > 0.0) {
        return Err(bad("cell sizes must be positive"));
    }
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(bad("bounds must be finite with lo <= hi"));
    }
    let cb = Checkerboard { seed: seed as u64, cell: [sx, sy, st], lo, hi };
    Ok(Expr::new(ExprKind::Checkerboard(cb), span))
}

pub(super) fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr(1)?;
    if p.peek().tok != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}
