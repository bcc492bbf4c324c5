//! Rational-function expressions and randomized identity testing.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := base ('^' int)?
//! base   := number | ident | '(' expr ')' | '-' base
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;

use crate::linalg::SeededRng;

pub const MAX_DEPTH: usize = 32;
pub const MAX_POW: i32 = 8;
pub const EQUIV_POINTS: usize = 16;
pub const EQUIV_RETRIES: usize = 8;
pub const EQUIV_RTOL: f64 = 1e-9;
pub const DEFAULT_EQUIV_SEED: u64 = 0x5eed_0a1e;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Const(Ratio<i64>),
    Var(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Neg(Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a})^{n}"),
            Expr::Neg(a) => write!(f, "-({a})"),
        }
    }
}

impl Expr {
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Pow(a, _) | Expr::Neg(a) => a.collect_vars(out),
        }
    }

    /// `None` at a singular point (near-zero divisor or non-finite value).
    pub fn eval(&self, env: &BTreeMap<String, f64>) -> Option<f64> {
        let v = match self {
            Expr::Const(c) => *c.numer() as f64 / *c.denom() as f64,
            Expr::Var(name) => *env.get(name)?,
            Expr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Expr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Expr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Expr::Div(a, b) => {
                let d = b.eval(env)?;
                if d.abs() < 1e-12 {
                    return None;
                }
                a.eval(env)? / d
            }
            Expr::Pow(a, n) => {
                let base = a.eval(env)?;
                if *n < 0 && base.abs() < 1e-12 {
                    return None;
                }
                base.powi(*n)
            }
            Expr::Neg(a) => -a.eval(env)?,
        };
        v.is_finite().then_some(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Ratio<i64>),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str) -> Option<Vec<Tok>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' | b'(' | b')' => {
                out.push(match c {
                    b'+' => Tok::Plus,
                    b'-' => Tok::Minus,
                    b'*' => Tok::Star,
                    b'/' => Tok::Slash,
                    b'^' => Tok::Caret,
                    b'(' => Tok::LParen,
                    _ => Tok::RParen,
                });
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                out.push(Tok::Num(parse_decimal(&text[start..i])?));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Tok::Ident(text[start..i].to_string()));
            }
            _ => return None,
        }
    }
    Some(out)
}

fn parse_decimal(s: &str) -> Option<Ratio<i64>> {
    let (int, frac) = match s.split_once('.') {
        Some((a, b)) => (a, b),
        None => (s, ""),
    };
    if (int.is_empty() && frac.is_empty()) || frac.contains('.') || int.len() + frac.len() > 15 {
        return None;
    }
    let digits = format!("{int}{frac}");
    let numer: i64 = digits.parse().ok()?;
    let denom = 10i64.checked_pow(frac.len() as u32)?;
    Some(Ratio::new(numer, denom))
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn enter(&mut self) -> Option<()> {
        self.depth += 1;
        (self.depth <= MAX_DEPTH).then_some(())
    }

    fn expr(&mut self) -> Option<Expr> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(&Tok::Minus) {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                break;
            }
        }
        self.depth -= 1;
        Some(lhs)
    }

    fn term(&mut self) -> Option<Expr> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(&Tok::Star) {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(&Tok::Slash) {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Some(lhs);
            }
        }
    }

    fn factor(&mut self) -> Option<Expr> {
        let base = self.base()?;
        if self.eat(&Tok::Caret) {
            let neg = self.eat(&Tok::Minus);
            let n = match self.toks.get(self.pos)? {
                Tok::Num(r) if r.is_integer() => *r.numer(),
                _ => return None,
            };
            self.pos += 1;
            let n = if neg { -n } else { n };
            if n.abs() > MAX_POW as i64 {
                return None;
            }
            return Some(Expr::Pow(Box::new(base), n as i32));
        }
        Some(base)
    }

    fn base(&mut self) -> Option<Expr> {
        self.enter()?;
        let out = match self.toks.get(self.pos)?.clone() {
            Tok::Num(r) => {
                self.pos += 1;
                Expr::Const(r)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                Expr::Var(name)
            }
            Tok::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(&Tok::RParen) {
                    return None;
                }
                inner
            }
            Tok::Minus => {
                self.pos += 1;
                Expr::Neg(Box::new(self.base()?))
            }
            _ => return None,
        };
        self.depth -= 1;
        Some(out)
    }
}

pub fn parse_expr(text: &str) -> Option<Expr> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return None;
    }
    let mut p = Parser { toks, pos: 0, depth: 0 };
    let e = p.expr()?;
    (p.pos == p.toks.len()).then_some(e)
}

fn sample_point(rng: &mut SeededRng) -> f64 {
    let num = rng.int_in(-50, 50) as f64;
    let den = rng.int_in(1, 16) as f64;
    num / den
}

/// Outcome of comparing two expressions at random rational points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquivalenceCheck {
    pub equivalent: bool,
    pub points_compared: usize,
    pub points_skipped: usize,
}

pub fn check_equivalence(a: &Expr, b: &Expr, seed: u64) -> EquivalenceCheck {
    let vars: Vec<String> = a.variables().union(&b.variables()).cloned().collect();
    let mut rng = SeededRng::new(seed);
    let mut compared = 0;
    let mut skipped = 0;
    for _ in 0..EQUIV_POINTS {
        let mut values = None;
        for _ in 0..=EQUIV_RETRIES {
            let env: BTreeMap<String, f64> = vars.iter().map(|v| (v.clone(), sample_point(&mut rng))).collect();
            if let (Some(x), Some(y)) = (a.eval(&env), b.eval(&env)) {
                values = Some((x, y));
                break;
            }
        }
        let Some((x, y)) = values else {
            skipped += 1;
            continue;
        };
        compared += 1;
        let scale = x.abs().max(y.abs()).max(1.0);
        if (x - y).abs() > EQUIV_RTOL * scale {
            return EquivalenceCheck {
                equivalent: false,
                points_compared: compared,
                points_skipped: skipped,
            };
        }
    }
    EquivalenceCheck {
        // With no evaluable point only structural equality counts.
        equivalent: compared > 0 || a == b,
        points_compared: compared,
        points_skipped: skipped,
    }
}

pub fn algebraic_loss_seeded(pred: &str, truth: &str, seed: u64) -> f64 {
    match (parse_expr(pred), parse_expr(truth)) {
        (Some(a), Some(b)) => f64::from(u8::from(!check_equivalence(&a, &b, seed).equivalent)),
        _ => 1.0,
    }
}

/// 0 when both sides parse and agree at every sampled point, else 1.
pub fn algebraic_loss(pred: &str, truth: &str) -> f64 {
    algebraic_loss_seeded(pred, truth, DEFAULT_EQUIV_SEED)
}
