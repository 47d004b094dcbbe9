//! Linear temporal logic over finite proposition traces.
//!
//! Concrete syntax:
//!
//! ```text
//! expr  := until ( '&' until )*          left associative, lowest precedence
//! until := unary ( 'U' until )?          right associative
//! unary := ('!' | 'X' | 'F' | 'G') unary | 'true' | ident | '(' expr ')'
//! ```
//!
//! `F φ` abbreviates `true U φ` and `G φ` abbreviates `!F!φ`. Both are kept as flagged nodes so
//! printing round-trips, and [`LtlFormula::expand`] rewrites them into the core operators.
//!
//! Traces are finite: `X φ` is false at the last index and `φ U ψ` needs its witness inside the
//! trace.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LtlError {
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("index {index} out of bounds for trace of length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("cannot evaluate on an empty trace")]
    EmptyTrace,
    #[error("sentence order needs at least one completion proposition")]
    EmptyOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LtlFormula {
    True,
    Atom(String),
    And(Box<LtlFormula>, Box<LtlFormula>),
    Not(Box<LtlFormula>),
    Next(Box<LtlFormula>),
    Until(Box<LtlFormula>, Box<LtlFormula>),
    Eventually(Box<LtlFormula>),
    Always(Box<LtlFormula>),
}

/// Ordered proposition sets `e_0, e_1, ...`, one per step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub steps: Vec<BTreeSet<String>>,
}

impl EventTrace {
    pub fn new(steps: Vec<BTreeSet<String>>) -> EventTrace {
        EventTrace { steps }
    }

    /// Builds a trace from string slices, e.g. `&[&["p1"], &[], &["p1", "p2"]]`.
    pub fn from_slices(steps: &[&[&str]]) -> EventTrace {
        EventTrace {
            steps: steps.iter().map(|s| s.iter().map(|p| p.to_string()).collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn holds(&self, index: usize, prop: &str) -> bool {
        self.steps[index].contains(prop)
    }

    /// First index at which `prop` holds.
    pub fn first_index(&self, prop: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.contains(prop))
    }
}

impl LtlFormula {
    pub fn atom(name: &str) -> LtlFormula {
        LtlFormula::Atom(name.to_string())
    }

    pub fn and(a: LtlFormula, b: LtlFormula) -> LtlFormula {
        LtlFormula::And(Box::new(a), Box::new(b))
    }

    pub fn not(a: LtlFormula) -> LtlFormula {
        LtlFormula::Not(Box::new(a))
    }

    pub fn next(a: LtlFormula) -> LtlFormula {
        LtlFormula::Next(Box::new(a))
    }

    pub fn until(a: LtlFormula, b: LtlFormula) -> LtlFormula {
        LtlFormula::Until(Box::new(a), Box::new(b))
    }

    pub fn eventually(a: LtlFormula) -> LtlFormula {
        LtlFormula::Eventually(Box::new(a))
    }

    pub fn always(a: LtlFormula) -> LtlFormula {
        LtlFormula::Always(Box::new(a))
    }

    pub fn parse(text: &str) -> Result<LtlFormula, LtlError> {
        parse_ltl(text)
    }

    /// Rewrites `F` and `G` into `U`, `!` and `true`.
    pub fn expand(&self) -> LtlFormula {
        use LtlFormula::*;
        match self {
            True => True,
            Atom(p) => Atom(p.clone()),
            And(a, b) => LtlFormula::and(a.expand(), b.expand()),
            Not(a) => LtlFormula::not(a.expand()),
            Next(a) => LtlFormula::next(a.expand()),
            Until(a, b) => LtlFormula::until(a.expand(), b.expand()),
            Eventually(a) => LtlFormula::until(True, a.expand()),
            Always(a) => LtlFormula::not(LtlFormula::until(True, LtlFormula::not(a.expand()))),
        }
    }

    pub fn depth(&self) -> usize {
        use LtlFormula::*;
        match self {
            True | Atom(_) => 0,
            Not(a) | Next(a) | Eventually(a) | Always(a) => 1 + a.depth(),
            And(a, b) | Until(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Proposition names appearing in the formula.
    pub fn atoms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<String>) {
        use LtlFormula::*;
        match self {
            True => {}
            Atom(p) => {
                out.insert(p.clone());
            }
            Not(a) | Next(a) | Eventually(a) | Always(a) => a.collect_atoms(out),
            And(a, b) | Until(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    /// Satisfaction at `index` under finite-trace semantics.
    pub fn eval(&self, trace: &EventTrace, index: usize) -> Result<bool, LtlError> {
        if trace.is_empty() {
            return Err(LtlError::EmptyTrace);
        }
        if index >= trace.len() {
            return Err(LtlError::IndexOutOfBounds { index, len: trace.len() });
        }
        Ok(self.eval_all(trace)[index])
    }

    /// Satisfaction at every index, computed bottom-up in one backward pass per node.
    pub fn eval_all(&self, trace: &EventTrace) -> Vec<bool> {
        use LtlFormula::*;
        let n = trace.len();
        match self {
            True => vec![true; n],
            Atom(p) => (0..n).map(|i| trace.holds(i, p)).collect(),
            And(a, b) => {
                let (a, b) = (a.eval_all(trace), b.eval_all(trace));
                a.iter().zip(&b).map(|(x, y)| *x && *y).collect()
            }
            Not(a) => a.eval_all(trace).into_iter().map(|x| !x).collect(),
            Next(a) => {
                let a = a.eval_all(trace);
                (0..n).map(|i| i + 1 < n && a[i + 1]).collect()
            }
            Until(a, b) => {
                let (a, b) = (a.eval_all(trace), b.eval_all(trace));
                let mut out = vec![false; n];
                let mut later = false;
                for i in (0..n).rev() {
                    later = b[i] || (a[i] && later);
                    out[i] = later;
                }
                out
            }
            Eventually(a) => {
                let a = a.eval_all(trace);
                let mut out = vec![false; n];
                let mut later = false;
                for i in (0..n).rev() {
                    later = later || a[i];
                    out[i] = later;
                }
                out
            }
            Always(a) => {
                let a = a.eval_all(trace);
                let mut out = vec![false; n];
                let mut later = true;
                for i in (0..n).rev() {
                    later = later && a[i];
                    out[i] = later;
                }
                out
            }
        }
    }
}

impl fmt::Display for LtlFormula {
    /// Fully parenthesised so that parsing the output yields the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use LtlFormula::*;
        match self {
            True => write!(f, "true"),
            Atom(p) => write!(f, "{p}"),
            And(a, b) => write!(f, "({a} & {b})"),
            Until(a, b) => write!(f, "({a} U {b})"),
            Not(a) => write!(f, "!{a}"),
            Next(a) => write!(f, "X {a}"),
            Eventually(a) => write!(f, "F {a}"),
            Always(a) => write!(f, "G {a}"),
        }
    }
}

/// `F(d1 & F(d2 & ... F dm))`: the propositions become true in the given order.
pub fn compile_order<S: AsRef<str>>(props: &[S]) -> Result<LtlFormula, LtlError> {
    let (last, rest) = props.split_last().ok_or(LtlError::EmptyOrder)?;
    let mut formula = LtlFormula::eventually(LtlFormula::atom(last.as_ref()));
    for p in rest.iter().rev() {
        formula = LtlFormula::eventually(LtlFormula::and(LtlFormula::atom(p.as_ref()), formula));
    }
    Ok(formula)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    True,
    Ident(String),
    And,
    Not,
    Next,
    Until,
    Eventually,
    Always,
    LParen,
    RParen,
}

fn is_reserved(word: &str) -> bool {
    matches!(word, "true" | "X" | "U" | "F" | "G")
}

pub fn is_valid_atom(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_reserved(name)
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, LtlError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '&' => Some(Tok::And),
            '!' => Some(Tok::Not),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            toks.push((i, tok));
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            let tok = match word {
                "true" => Tok::True,
                "X" => Tok::Next,
                "U" => Tok::Until,
                "F" => Tok::Eventually,
                "G" => Tok::Always,
                _ => Tok::Ident(word.to_string()),
            };
            toks.push((start, tok));
            continue;
        }
        let ch = text[i..].chars().next().unwrap_or('?');
        return Err(LtlError::Parse { position: i, message: format!("unknown token {ch:?}") });
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn error(&self, message: String) -> LtlError {
        LtlError::Parse { position: self.offset(), message }
    }

    fn expr(&mut self) -> Result<LtlFormula, LtlError> {
        let mut lhs = self.until()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            let rhs = self.until()?;
            lhs = LtlFormula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<LtlFormula, LtlError> {
        let lhs = self.unary()?;
        if self.peek() == Some(&Tok::Until) {
            self.pos += 1;
            let rhs = self.until()?;
            return Ok(LtlFormula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<LtlFormula, LtlError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error("unexpected end of input".into()));
        };
        self.pos += 1;
        match tok {
            Tok::Not => Ok(LtlFormula::not(self.unary()?)),
            Tok::Next => Ok(LtlFormula::next(self.unary()?)),
            Tok::Eventually => Ok(LtlFormula::eventually(self.unary()?)),
            Tok::Always => Ok(LtlFormula::always(self.unary()?)),
            Tok::True => Ok(LtlFormula::True),
            Tok::Ident(name) => Ok(LtlFormula::Atom(name)),
            Tok::LParen => {
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.error("expected ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            other => {
                self.pos -= 1;
                Err(self.error(format!("unexpected token {}", describe(&other))))
            }
        }
    }
}

fn describe(tok: &Tok) -> &'static str {
    match tok {
        Tok::True => "true",
        Tok::Ident(_) => "identifier",
        Tok::And => "&",
        Tok::Not => "!",
        Tok::Next => "X",
        Tok::Until => "U",
        Tok::Eventually => "F",
        Tok::Always => "G",
        Tok::LParen => "(",
        Tok::RParen => ")",
    }
}

pub fn parse_ltl(text: &str) -> Result<LtlFormula, LtlError> {
    let mut parser = Parser { toks: lex(text)?, pos: 0, end: text.len() };
    let formula = parser.expr()?;
    if let Some(tok) = parser.peek() {
        let message = format!("unexpected token {}", describe(tok));
        return Err(parser.error(message));
    }
    Ok(formula)
}
