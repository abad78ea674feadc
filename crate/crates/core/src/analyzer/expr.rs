//! Length and bound expressions: integers, identifiers, `+`, `*` (or `·`)
//! and parentheses.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Const(i64),
    Var(String),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("expression {src:?}: {msg} at byte {pos}")]
    Parse { src: String, pos: usize, msg: String },
    #[error("unbound name {0}")]
    Unbound(String),
    #[error("overflow")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(i64),
    Id(String),
    Plus,
    Star,
    Open,
    Close,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let err = |pos, msg: &str| ExprError::Parse { src: src.into(), pos, msg: msg.into() };
    let mut out = Vec::new();
    let mut it = src.char_indices().peekable();
    while let Some(&(i, c)) = it.peek() {
        match c {
            ' ' | '\t' => {
                it.next();
            }
            '+' => {
                it.next();
                out.push((i, Tok::Plus));
            }
            '*' | '·' | '×' => {
                it.next();
                out.push((i, Tok::Star));
            }
            '(' => {
                it.next();
                out.push((i, Tok::Open));
            }
            ')' => {
                it.next();
                out.push((i, Tok::Close));
            }
            '0'..='9' => {
                let mut s = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    s.push(d);
                    it.next();
                }
                out.push((i, Tok::Num(s.parse().map_err(|_| err(i, "number too large"))?)));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if !(d.is_ascii_alphanumeric() || d == '_') {
                        break;
                    }
                    s.push(d);
                    it.next();
                }
                out.push((i, Tok::Id(s)));
            }
            _ => return Err(err(i, "unexpected character")),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        let pos = self.toks.get(self.pos).map_or(self.src.len(), |t| t.0);
        ExprError::Parse { src: self.src.into(), pos, msg: msg.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut e = self.product()?;
        while self.peek() == Some(&Tok::Plus) {
            self.pos += 1;
            e = Expr::Add(Box::new(e), Box::new(self.product()?));
        }
        Ok(e)
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut e = self.atom()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            e = Expr::Mul(Box::new(e), Box::new(self.atom()?));
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let t = self.peek().cloned().ok_or_else(|| self.err("unexpected end"))?;
        self.pos += 1;
        match t {
            Tok::Num(n) => Ok(Expr::Const(n)),
            Tok::Id(s) => Ok(Expr::Var(s)),
            Tok::Open => {
                let e = self.sum()?;
                if self.peek() != Some(&Tok::Close) {
                    return Err(self.err("expected )"));
                }
                self.pos += 1;
                Ok(e)
            }
            _ => {
                self.pos -= 1;
                Err(self.err("expected number, name or ("))
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { src, toks: lex(src)?, pos: 0 };
        let e = p.sum()?;
        if p.pos != p.toks.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, env: &BTreeMap<String, i64>) -> Result<i64, ExprError> {
        Ok(match self {
            Expr::Const(n) => *n,
            Expr::Var(v) => *env.get(v).ok_or_else(|| ExprError::Unbound(v.clone()))?,
            Expr::Add(a, b) => a.eval(env)?.checked_add(b.eval(env)?).ok_or(ExprError::Overflow)?,
            Expr::Mul(a, b) => a.eval(env)?.checked_mul(b.eval(env)?).ok_or(ExprError::Overflow)?,
        })
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect(&self, out: &mut Vec<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => out.push(v.clone()),
            Expr::Add(a, b) | Expr::Mul(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(n) => write!(f, "{n}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Add(a, b) => write!(f, "{a} + {b}"),
            Expr::Mul(a, b) => {
                let wrap = |e: &Expr| if matches!(e, Expr::Add(..)) { format!("({e})") } else { e.to_string() };
                write!(f, "{}*{}", wrap(a), wrap(b))
            }
        }
    }
}

/// Parse and evaluate in one go.
pub fn eval_str(src: &str, env: &BTreeMap<String, i64>) -> Result<i64, ExprError> {
    Expr::parse(src)?.eval(env)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> BTreeMap<String, i64> {
        [("n_bins", 8), ("n_host_features", 20), ("n_rows", 569)].into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn evaluates_with_precedence() {
        assert_eq!(eval_str("n_bins·n_host_features·2", &env()).unwrap(), 320);
        assert_eq!(eval_str("1 + 2*3", &env()).unwrap(), 7);
        assert_eq!(eval_str("(1 + 2)*3", &env()).unwrap(), 9);
        assert_eq!(eval_str("n_rows", &env()).unwrap(), 569);
    }

    #[test]
    fn errors_carry_position() {
        match Expr::parse("n_rows + * 2").unwrap_err() {
            ExprError::Parse { pos, .. } => assert_eq!(pos, 9),
            e => panic!("{e}"),
        }
        assert!(Expr::parse("(1").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert_eq!(eval_str("tree_depth", &env()), Err(ExprError::Unbound("tree_depth".into())));
    }

    #[test]
    fn display_reparses() {
        let e = Expr::parse("(a + 1)*b + 2").unwrap();
        assert_eq!(Expr::parse(&e.to_string()).unwrap(), e);
        assert_eq!(e.names(), vec!["a".to_string(), "b".to_string()]);
    }
}
