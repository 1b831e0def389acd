//! Recursive-descent parser for the expression DSL.
//!
//! Whitespace-insensitive; reports byte offsets. The grammar is prefix calls
//! only (`Op(arg, ...)`), feature tokens are `$name`, integer literals must
//! be >= 1, float literals carry a decimal point, and scientific notation is
//! rejected.

use thiserror::Error;

use super::{op_from_name, BinaryOp, Expr, Feature, OpKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Feature(String),
    Int(u32),
    Float(f64),
    LParen,
    RParen,
    Comma,
    Eof,
}

fn lex(input: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = input.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            b'$' => {
                let start = i;
                i += 1;
                let name_start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                if i == name_start {
                    return err(start, "expected feature name after '$'");
                }
                toks.push((Tok::Feature(input[name_start..i].to_string()), start));
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let mut is_float = false;
                if i < bytes.len() && bytes[i] == b'.' {
                    is_float = true;
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return err(start, "malformed number: digits required after '.'");
                    }
                }
                if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                    return err(
                        start,
                        "malformed number (scientific notation is not supported)",
                    );
                }
                let text = &input[start..i];
                if is_float {
                    match text.parse::<f64>() {
                        Ok(v) if v.is_finite() => toks.push((Tok::Float(v), start)),
                        _ => return err(start, format!("malformed float literal '{text}'")),
                    }
                } else {
                    match text.parse::<u32>() {
                        Ok(v) => toks.push((Tok::Int(v), start)),
                        Err(_) => {
                            return err(start, format!("integer literal '{text}' out of range"))
                        }
                    }
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(input[start..i].to_string()), start));
            }
            _ => {
                return err(
                    i,
                    format!("unexpected character '{}'", input[i..].chars().next().unwrap()),
                )
            }
        }
    }
    toks.push((Tok::Eof, input.len()));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &(Tok, usize) {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<usize, ParseError> {
        let (t, off) = self.bump();
        if t == tok {
            Ok(off)
        } else {
            err(off, format!("expected {what}"))
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        let (tok, off) = self.bump();
        match tok {
            Tok::Feature(name) => match Feature::from_name(&name) {
                Some(f) => Ok(Expr::Feature(f)),
                None => err(off, format!("unknown feature '${name}'")),
            },
            Tok::Int(v) => {
                if v < 1 {
                    err(off, "integer constant must be >= 1 (use 0.0 for float zero)")
                } else {
                    Ok(Expr::IntConst(v))
                }
            }
            Tok::Float(v) => Ok(Expr::FloatConst(v)),
            Tok::Ident(name) => {
                let Some(kind) = op_from_name(&name) else {
                    return err(off, format!("unknown operator '{name}'"));
                };
                self.expect(Tok::LParen, &format!("'(' after operator {name}"))?;
                let mut args = Vec::new();
                let mut offsets = Vec::new();
                if self.peek().0 == Tok::RParen {
                    self.bump();
                } else {
                    loop {
                        offsets.push(self.peek().1);
                        args.push(self.parse_expr()?);
                        let (t, toff) = self.bump();
                        match t {
                            Tok::Comma => continue,
                            Tok::RParen => break,
                            _ => return err(toff, "expected ',' or ')' in argument list"),
                        }
                    }
                }
                build_call(kind, &name, args, offsets, off)
            }
            Tok::LParen | Tok::RParen | Tok::Comma => err(off, "expected an expression"),
            Tok::Eof => err(off, "unexpected end of input"),
        }
    }
}

fn arity_error(name: &str, expected: usize, found: usize, off: usize) -> ParseError {
    ParseError {
        offset: off,
        message: format!("{name} expects {expected} argument(s), found {found}"),
    }
}

fn window_of(arg: &Expr, name: &str, off: usize) -> Result<u32, ParseError> {
    match arg {
        Expr::IntConst(v) => Ok(*v),
        Expr::FloatConst(_) => err(
            off,
            format!("rolling window of {name} must be an integer constant"),
        ),
        _ => err(
            off,
            format!("rolling window of {name} must be an integer constant"),
        ),
    }
}

fn build_call(
    kind: OpKind,
    name: &str,
    mut args: Vec<Expr>,
    offsets: Vec<usize>,
    call_off: usize,
) -> Result<Expr, ParseError> {
    match kind {
        OpKind::Unary(op) => {
            if args.len() != 1 {
                return Err(arity_error(name, 1, args.len(), call_off));
            }
            Ok(Expr::Unary(op, Box::new(args.remove(0))))
        }
        OpKind::Binary(op) => {
            if args.len() != 2 {
                return Err(arity_error(name, 2, args.len(), call_off));
            }
            let right = args.remove(1);
            let left = args.remove(0);
            if op == BinaryOp::Pow
                && !matches!(right, Expr::IntConst(_) | Expr::FloatConst(_))
            {
                return err(offsets[1], "Pow exponent must be a constant");
            }
            Ok(Expr::Binary(op, Box::new(left), Box::new(right)))
        }
        OpKind::Rolling(op) => {
            if args.len() != 2 {
                return Err(arity_error(name, 2, args.len(), call_off));
            }
            let w = window_of(&args[1], name, offsets[1])?;
            Ok(Expr::Rolling(op, Box::new(args.remove(0)), w))
        }
        OpKind::RollingBin(op) => {
            if args.len() != 3 {
                return Err(arity_error(name, 3, args.len(), call_off));
            }
            let w = window_of(&args[2], name, offsets[2])?;
            let right = args.remove(1);
            let left = args.remove(0);
            Ok(Expr::RollingBin(op, Box::new(left), Box::new(right), w))
        }
    }
}

/// Parse expression text into an [`Expr`].
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.parse_expr()?;
    let (t, off) = p.bump();
    if t != Tok::Eof {
        return err(off, "trailing input after expression");
    }
    Ok(e)
}
