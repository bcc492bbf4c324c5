//! Quantities with SI dimensions.
//!
//! A unit expression is a product of unit symbols separated by spaces, `*`
//! or `·`, with `/` dividing by the factor that follows. Factors take an
//! integer power `^n` or a small rational power `^(p/q)`, and may be
//! parenthesised groups.

use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::sync::OnceLock;

use num_rational::Ratio;
use regex::Regex;

use super::numeric::number_regex;

pub type Exponent = Ratio<i32>;

/// Exponents over (length, mass, time, current, temperature, amount,
/// luminous intensity).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Dims(pub [Exponent; 7]);

const NAMES: [&str; 7] = ["L", "M", "T", "I", "Θ", "N", "J"];

impl Dims {
    pub const NONE: Dims = Dims([Ratio::new_raw(0, 1); 7]);

    pub fn from_ints(e: [i32; 7]) -> Self {
        Dims(e.map(Ratio::from_integer))
    }

    pub fn is_dimensionless(&self) -> bool {
        *self == Self::NONE
    }

    pub fn pow(self, p: Exponent) -> Self {
        Dims(self.0.map(|e| e * p))
    }
}

impl Add for Dims {
    type Output = Dims;
    fn add(self, o: Dims) -> Dims {
        let mut out = self.0;
        out.iter_mut().zip(o.0).for_each(|(a, b)| *a += b);
        Dims(out)
    }
}

impl Neg for Dims {
    type Output = Dims;
    fn neg(self) -> Dims {
        Dims(self.0.map(|e| -e))
    }
}

impl Sub for Dims {
    type Output = Dims;
    fn sub(self, o: Dims) -> Dims {
        self + (-o)
    }
}

impl fmt::Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_dimensionless() {
            return f.write_str("1");
        }
        let parts: Vec<String> = (0..7)
            .filter(|&i| self.0[i] != Ratio::from_integer(0))
            .map(|i| format!("{}^{}", NAMES[i], self.0[i]))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    /// Value in SI base units.
    pub value: f64,
    pub dims: Dims,
}

/// `(symbol, factor to SI, [L, M, T, I, Θ, N, J])`.
const UNIT_TABLE: &[(&str, f64, [i32; 7])] = &[
    ("m", 1.0, [1, 0, 0, 0, 0, 0, 0]),
    ("km", 1e3, [1, 0, 0, 0, 0, 0, 0]),
    ("cm", 1e-2, [1, 0, 0, 0, 0, 0, 0]),
    ("mm", 1e-3, [1, 0, 0, 0, 0, 0, 0]),
    ("s", 1.0, [0, 0, 1, 0, 0, 0, 0]),
    ("min", 60.0, [0, 0, 1, 0, 0, 0, 0]),
    ("h", 3600.0, [0, 0, 1, 0, 0, 0, 0]),
    ("g", 1e-3, [0, 1, 0, 0, 0, 0, 0]),
    ("kg", 1.0, [0, 1, 0, 0, 0, 0, 0]),
    ("A", 1.0, [0, 0, 0, 1, 0, 0, 0]),
    ("K", 1.0, [0, 0, 0, 0, 1, 0, 0]),
    ("mol", 1.0, [0, 0, 0, 0, 0, 1, 0]),
    ("cd", 1.0, [0, 0, 0, 0, 0, 0, 1]),
    ("N", 1.0, [1, 1, -2, 0, 0, 0, 0]),
    ("J", 1.0, [2, 1, -2, 0, 0, 0, 0]),
    ("W", 1.0, [2, 1, -3, 0, 0, 0, 0]),
    ("Hz", 1.0, [0, 0, -1, 0, 0, 0, 0]),
    ("Pa", 1.0, [-1, 1, -2, 0, 0, 0, 0]),
];

pub fn lookup_unit(symbol: &str) -> Option<(f64, Dims)> {
    UNIT_TABLE
        .iter()
        .find(|(s, _, _)| *s == symbol)
        .map(|&(_, f, d)| (f, Dims::from_ints(d)))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Sym(String),
    Int(i32),
    Mul,
    Div,
    Pow,
    LParen,
    RParen,
    Minus,
}

fn tokenize(s: &str) -> Option<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => {
                // Whitespace between two factors is multiplication.
                if matches!(out.last(), Some(Tok::Sym(_) | Tok::RParen | Tok::Int(_))) {
                    let mut j = i;
                    while j < chars.len() && chars[j].is_whitespace() {
                        j += 1;
                    }
                    if j < chars.len() && (chars[j].is_ascii_alphabetic() || chars[j] == '(') {
                        out.push(Tok::Mul);
                    }
                }
                i += 1;
            }
            '*' | '·' | '⋅' => {
                out.push(Tok::Mul);
                i += 1;
            }
            '/' => {
                out.push(Tok::Div);
                i += 1;
            }
            '^' => {
                out.push(Tok::Pow);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '+' => i += 1,
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                out.push(Tok::Int(text.parse().ok()?));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    i += 1;
                }
                out.push(Tok::Sym(chars[start..i].iter().collect()));
            }
            _ => return None,
        }
    }
    Some(out)
}

struct UnitParser {
    toks: Vec<Tok>,
    pos: usize,
    depth: usize,
}

impl UnitParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Option<(f64, Dims)> {
        let (mut f, mut d) = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Mul) => {
                    self.pos += 1;
                    let (g, e) = self.factor()?;
                    f *= g;
                    d = d + e;
                }
                Some(Tok::Div) => {
                    self.pos += 1;
                    let (g, e) = self.factor()?;
                    f /= g;
                    d = d - e;
                }
                _ => return Some((f, d)),
            }
        }
    }

    fn factor(&mut self) -> Option<(f64, Dims)> {
        let (f, d) = match self.bump()? {
            Tok::Sym(s) => lookup_unit(&s)?,
            Tok::LParen => {
                self.depth += 1;
                if self.depth > 16 {
                    return None;
                }
                let inner = self.expr()?;
                self.depth -= 1;
                if self.bump()? != Tok::RParen {
                    return None;
                }
                inner
            }
            _ => return None,
        };
        if self.peek() == Some(&Tok::Pow) {
            self.pos += 1;
            let p = self.exponent()?;
            let pf = *p.numer() as f64 / *p.denom() as f64;
            return Some((f.powf(pf), d.pow(p)));
        }
        Some((f, d))
    }

    fn signed_int(&mut self) -> Option<i32> {
        match self.bump()? {
            Tok::Minus => match self.bump()? {
                Tok::Int(n) => Some(-n),
                _ => None,
            },
            Tok::Int(n) => Some(n),
            _ => None,
        }
    }

    fn exponent(&mut self) -> Option<Exponent> {
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let p = self.signed_int()?;
            let q = if self.peek() == Some(&Tok::Div) {
                self.pos += 1;
                self.signed_int()?
            } else {
                1
            };
            if self.bump()? != Tok::RParen || q <= 0 || q > 4 {
                return None;
            }
            return Some(Ratio::new(p, q));
        }
        let n = self.signed_int()?;
        (n.abs() <= 16).then(|| Ratio::from_integer(n))
    }
}

/// Factor to SI and dimensions of a unit expression such as `kg m/s^2`.
pub fn parse_unit_expr(text: &str) -> Option<(f64, Dims)> {
    let toks = tokenize(text.trim())?;
    if toks.is_empty() {
        return None;
    }
    let mut p = UnitParser { toks, pos: 0, depth: 0 };
    let out = p.expr()?;
    (p.pos == p.toks.len()).then_some(out)
}

fn exponent_spans(text: &str) -> Vec<(usize, usize)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\^\s*(?:\([^)]*\)|[-+]?\d+)").unwrap());
    re.find_iter(text).map(|m| (m.start(), m.end())).collect()
}

/// Finds `<number> [unit-expr]` at the end of `text`. A bare number is a
/// dimensionless quantity; trailing text that is not a known unit
/// expression makes the parse fail.
pub fn parse_quantity(text: &str) -> Option<Quantity> {
    let spans = exponent_spans(text);
    let candidates: Vec<_> = number_regex()
        .find_iter(text)
        .filter(|m| !spans.iter().any(|&(s, e)| m.start() < e && s < m.end()))
        .collect();
    let m = candidates.last()?;
    let value: f64 = m.as_str().parse().ok()?;
    let rest = text[m.end()..].trim().trim_end_matches(['.', ',', '!', '?', ';']);
    if rest.is_empty() {
        return Some(Quantity {
            value,
            dims: Dims::NONE,
        });
    }
    let (factor, dims) = parse_unit_expr(rest)?;
    Some(Quantity {
        value: value * factor,
        dims,
    })
}

/// 0 when both sides carry the same dimensions or neither parses, 1
/// otherwise.
pub fn unit_loss(pred: &str, truth: &str) -> f64 {
    match (parse_quantity(pred), parse_quantity(truth)) {
        (Some(a), Some(b)) => f64::from(u8::from(a.dims != b.dims)),
        (None, None) => 0.0,
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VELOCITY: [i32; 7] = [1, 0, -1, 0, 0, 0, 0];

    #[test]
    fn quantity_examples() {
        let q = parse_quantity("3 m/s").unwrap();
        assert_eq!(q.value, 3.0);
        assert_eq!(q.dims, Dims::from_ints(VELOCITY));
        let q = parse_quantity("5 km/h").unwrap();
        assert!((q.value - 5000.0 / 3600.0).abs() < 1e-12);
        assert!((q.value - 1.3889).abs() < 1e-4);
        assert_eq!(q.dims, Dims::from_ints(VELOCITY));
        assert_eq!(parse_quantity("7 widgets"), None);
        assert_eq!(parse_quantity("hello"), None);
    }

    #[test]
    fn grammar_forms() {
        let n = parse_quantity("2 kg m/s^2").unwrap();
        assert_eq!(n.dims, lookup_unit("N").unwrap().1);
        let n = parse_quantity("2 kg*m*s^-2").unwrap();
        assert_eq!(n.dims, lookup_unit("N").unwrap().1);
        let a = parse_quantity("4 m^2").unwrap();
        assert_eq!((a.value, a.dims), (4.0, Dims::from_ints([2, 0, 0, 0, 0, 0, 0])));
        let p = parse_quantity("1 J/(mol K)").unwrap();
        assert_eq!(p.dims, Dims::from_ints([2, 1, -2, 0, -1, -1, 0]));
        let r = parse_quantity("9 m^(1/2)").unwrap();
        assert_eq!(r.dims.0[0], Ratio::new(1, 2));
        assert_eq!(parse_quantity("speed is 12 m/s.").unwrap().value, 12.0);
        assert_eq!(parse_quantity("42").unwrap().dims, Dims::NONE);
        assert_eq!(parse_quantity("3 m/"), None);
        assert_eq!(parse_quantity("3 m^(1/7)"), None);
    }

    #[test]
    fn unit_loss_examples() {
        assert_eq!(unit_loss("3 m/s", "5 km/h"), 0.0);
        assert_eq!(unit_loss("3 m", "3 s"), 1.0);
        assert_eq!(unit_loss("hello", "world"), 0.0);
        assert_eq!(unit_loss("3 m", "world"), 1.0);
        assert_eq!(unit_loss("20 J", "3 N m"), 0.0);
        assert_eq!(unit_loss("1 W", "1 J/s"), 0.0);
        assert_eq!(unit_loss("2 Hz", "2 s^-1"), 0.0);
    }

    #[test]
    fn conversion_invariance() {
        for (a, b) in [("1 m", "1 km"), ("5 mm", "2 cm"), ("3 g", "3 kg"), ("1 min", "1 h")] {
            assert_eq!(unit_loss(a, b), 0.0, "{a} vs {b}");
        }
        let km = parse_quantity("1 km").unwrap();
        assert_eq!(km.value, 1000.0);
    }
}
