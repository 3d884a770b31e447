//! Catalog functions of `(t, x)` and their linear combinations.
//!
//! Used for hypothesis bases, local-volatility models and drifts. A function is
//! written as a sum of optionally scaled catalog atoms, e.g. `"0.5 + 0.5*x2"`
//! or `"0.1*x"`, and serialises back to the same textual form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    One,
    X,
    X2,
    AbsX,
    OnePlusAbsX,
    T,
    TX2,
}

impl Atom {
    pub const ALL: [Atom; 7] = [Atom::One, Atom::X, Atom::X2, Atom::AbsX, Atom::OnePlusAbsX, Atom::T, Atom::TX2];

    #[inline]
    pub fn eval(self, t: f64, x: f64) -> f64 {
        match self {
            Atom::One => 1.0,
            Atom::X => x,
            Atom::X2 => x * x,
            Atom::AbsX => x.abs(),
            Atom::OnePlusAbsX => 1.0 + x.abs(),
            Atom::T => t,
            Atom::TX2 => t * x * x,
        }
    }

    /// Degree of homogeneity in `x`, where it exists.
    pub fn x_degree(self) -> Option<u32> {
        match self {
            Atom::One | Atom::T => Some(0),
            Atom::X | Atom::AbsX => Some(1),
            Atom::X2 | Atom::TX2 => Some(2),
            Atom::OnePlusAbsX => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Atom::One => "one",
            Atom::X => "x",
            Atom::X2 => "x2",
            Atom::AbsX => "absx",
            Atom::OnePlusAbsX => "one_plus_absx",
            Atom::T => "t",
            Atom::TX2 => "tx2",
        }
    }

    fn from_name(s: &str) -> Option<Atom> {
        Atom::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// `sum_i c_i * atom_i(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Func {
    terms: Vec<(f64, Atom)>,
}

impl Func {
    pub fn atom(a: Atom) -> Self {
        Func { terms: vec![(1.0, a)] }
    }

    pub fn scaled(c: f64, a: Atom) -> Self {
        Func { terms: vec![(c, a)] }
    }

    pub fn constant(c: f64) -> Self {
        Func::scaled(c, Atom::One)
    }

    pub fn zero() -> Self {
        Func { terms: Vec::new() }
    }

    pub fn from_terms(terms: Vec<(f64, Atom)>) -> Self {
        Func { terms }
    }

    pub fn terms(&self) -> &[(f64, Atom)] {
        &self.terms
    }

    pub fn scale(&self, c: f64) -> Self {
        Func { terms: self.terms.iter().map(|&(k, a)| (c * k, a)).collect() }
    }

    pub fn add(&self, other: &Func) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Func { terms }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        self.terms.iter().map(|&(c, a)| c * a.eval(t, x)).sum()
    }

    /// Coefficients per atom after merging repeated atoms, zero terms dropped.
    pub fn canonical(&self) -> Vec<(Atom, f64)> {
        let mut out: Vec<(Atom, f64)> = Vec::new();
        for &(c, a) in &self.terms {
            match out.iter_mut().find(|(b, _)| *b == a) {
                Some(entry) => entry.1 += c,
                None => out.push((a, c)),
            }
        }
        out.retain(|(_, c)| *c != 0.0);
        out.sort_by_key(|p| p.0);
        out
    }

    /// Degree of homogeneity in `x` if every atom shares one.
    pub fn x_degree(&self) -> Option<u32> {
        let mut deg = None;
        for (a, _) in self.canonical() {
            let d = a.x_degree()?;
            match deg {
                None => deg = Some(d),
                Some(e) if e != d => return None,
                _ => {}
            }
        }
        deg
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, &(c, a)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if c == 1.0 {
                write!(f, "{}", a.name())?;
            } else if a == Atom::One {
                write!(f, "{c:?}")?;
            } else {
                write!(f, "{c:?}*{}", a.name())?;
            }
        }
        Ok(())
    }
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, want: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(want) {
            self.pos += want.len_utf8();
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Option<f64> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        let digits = |i: &mut usize| {
            let s = *i;
            while *i < bytes.len() && bytes[*i].is_ascii_digit() {
                *i += 1;
            }
            *i > s
        };
        let mut any = digits(&mut i);
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            any |= digits(&mut i);
        }
        if !any {
            return None;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if digits(&mut j) {
                i = j;
            }
        }
        self.pos = i;
        self.src[start..i].parse().ok()
    }

    fn ident(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        (self.pos > start).then(|| &self.src[start..self.pos])
    }
}

impl FromStr for Func {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut sc = Scanner { src: s, pos: 0 };
        let mut terms = Vec::new();
        sc.skip_ws();
        if sc.pos == s.len() {
            return Err(Error::Parse("empty function descriptor".into()));
        }
        let mut sign = if sc.eat('-') {
            -1.0
        } else {
            sc.eat('+');
            1.0
        };
        loop {
            if sc.eat('-') {
                sign = -sign;
            }
            sc.skip_ws();
            let term = if sc.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
                let c = sc.number().ok_or_else(|| Error::Parse(format!("bad number at {} in {s:?}", sc.pos)))?;
                if sc.eat('*') {
                    let name = sc.ident().ok_or_else(|| Error::Parse(format!("expected a name after '*' in {s:?}")))?;
                    let a = Atom::from_name(name).ok_or_else(|| Error::Parse(format!("unknown function {name:?}")))?;
                    (c, a)
                } else {
                    (c, Atom::One)
                }
            } else {
                let name = sc.ident().ok_or_else(|| Error::Parse(format!("expected a term at {} in {s:?}", sc.pos)))?;
                let a = Atom::from_name(name).ok_or_else(|| Error::Parse(format!("unknown function {name:?}")))?;
                (1.0, a)
            };
            if !term.0.is_finite() {
                return Err(Error::Parse(format!("non-finite coefficient in {s:?}")));
            }
            terms.push((sign * term.0, term.1));
            sc.skip_ws();
            if sc.pos == s.len() {
                break;
            }
            sign = if sc.eat('+') {
                1.0
            } else if sc.eat('-') {
                -1.0
            } else {
                return Err(Error::Parse(format!("unexpected input at {} in {s:?}", sc.pos)));
            };
        }
        Ok(Func { terms })
    }
}

impl Serialize for Func {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Func {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
