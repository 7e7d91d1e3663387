//! Tokenizer and recursive-descent parser for short codes.
//!
//! ```text
//! expr    := add (("<" | ">") add)*
//! add     := mul (("+" | "-") mul)*
//! mul     := unary (("*" | "/") unary)*
//! unary   := "-" unary | "+" unary | power
//! power   := primary ("**" unary)?
//! primary := number | SYMBOL | "N" | FUNC "(" expr ("," expr)* ")" | "(" expr ")"
//! ```

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use super::ast::{BinOp, Expr, Func, Symbol, UnaryOp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected character `{ch}` at byte {position}")]
    Lex { position: usize, ch: char },
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: &'static str },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("{function} takes {expected:?} arguments, got {got}")]
    Arity { function: Func, expected: &'static [usize], got: usize },
    #[error("window argument of {function} must be a non-negative integer literal")]
    NonLiteralWindow { function: Func },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    StarStar,
    Slash,
    Gt,
    Lt,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'/' => Tok::Slash,
            b'>' => Tok::Gt,
            b'<' => Tok::Lt,
            b'*' if b.get(i + 1) == Some(&b'*') => {
                i += 1;
                Tok::StarStar
            }
            b'*' => Tok::Star,
            b'0'..=b'9' | b'.' => {
                while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                    i += 1;
                }
                if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                    let mut j = i + 1;
                    if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                        j += 1;
                    }
                    if j < b.len() && b[j].is_ascii_digit() {
                        while j < b.len() && b[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Lex { position: start, ch: c as char })?;
                out.push((start, Tok::Num(value)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].into())));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Lex { position: start, ch });
            }
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn position(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn syntax<T>(&self, message: &'static str) -> Result<T, ParseError> {
        Err(ParseError::Syntax { position: self.position(), message })
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.add()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Gt) => BinOp::Gt,
                Some(Tok::Lt) => BinOp::Lt,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::binary(op, lhs, self.add()?);
        }
    }

    fn add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::binary(op, lhs, self.mul()?);
        }
    }

    fn mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::binary(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)));
        }
        if self.eat(&Tok::Plus) {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat(&Tok::StarStar) {
            return Ok(Expr::binary(BinOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(Expr::Number(x))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(&Tok::RParen) {
                    return self.syntax("expected `)`");
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    let func = Func::from_name(&name).ok_or(ParseError::UnknownFunction(name))?;
                    self.pos += 1;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        args.push(self.expr()?);
                        while self.eat(&Tok::Comma) {
                            args.push(self.expr()?);
                        }
                    }
                    if !self.eat(&Tok::RParen) {
                        return self.syntax("expected `,` or `)`");
                    }
                    Ok(Expr::Call(func, args))
                } else if name == "N" {
                    Ok(Expr::FullWindow)
                } else {
                    Symbol::from_name(&name).map(Expr::Terminal).ok_or(ParseError::UnknownSymbol(name))
                }
            }
            Some(_) => self.syntax("expected operand"),
            None => self.syntax("unexpected end of input"),
        }
    }
}

/// Checks arities, window literals and placement of `N`.
pub fn validate(expr: &Expr) -> Result<(), ParseError> {
    validate_at(expr, false)
}

fn validate_at(expr: &Expr, window_slot: bool) -> Result<(), ParseError> {
    match expr {
        Expr::FullWindow if !window_slot => {
            Err(ParseError::Syntax { position: 0, message: "`N` is only valid as a window argument" })
        }
        Expr::Terminal(_) | Expr::Number(_) | Expr::FullWindow => Ok(()),
        Expr::Unary(_, e) => validate_at(e, false),
        Expr::Binary(_, l, r) => {
            validate_at(l, false)?;
            validate_at(r, false)
        }
        Expr::Call(func, args) => {
            let expected = func.arities();
            if !expected.contains(&args.len()) {
                return Err(ParseError::Arity { function: *func, expected, got: args.len() });
            }
            for (i, a) in args.iter().enumerate() {
                if i == 1 && func.has_window() {
                    match a {
                        Expr::FullWindow if func.accepts_full_window() => {}
                        Expr::Number(x) if window_literal(*x, func.min_window()).is_some() => {}
                        _ => return Err(ParseError::NonLiteralWindow { function: *func }),
                    }
                } else {
                    validate_at(a, false)?;
                }
            }
            Ok(())
        }
    }
}

/// An integer-valued literal `>= min`, as a window length.
pub(crate) fn window_literal(x: f64, min: usize) -> Option<usize> {
    if x.is_finite() && x == crate::math::floor(x) && x >= min as f64 && x <= 1.0e6 {
        Some(x as usize)
    } else {
        None
    }
}

/// Parses and validates a short code.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { toks: tokenize(src)?, pos: 0, end: src.len() };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.syntax("unexpected trailing input");
    }
    validate(&e)?;
    Ok(e)
}
