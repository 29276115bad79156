//! Exact rational numbers and their JSON encoding.
//!
//! A rational is written as a JSON number when it is exactly representable
//! as an `f64` (integers are written without a fractional part), and as a
//! `"p/q"` string otherwise, so every value survives a round trip bit-exactly.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Rational = BigRational;

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn hundred() -> Rational {
    int(100)
}

/// Exact value of a finite `f64`.
pub fn from_f64(x: f64) -> Option<Rational> {
    Rational::from_f64(x)
}

/// Nearest `f64`.
pub fn to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Parses `"p/q"`, a plain integer, or a decimal literal such as `"0.25"`.
pub fn parse(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p = BigInt::from_str(p.trim()).ok()?;
        let q = BigInt::from_str(q.trim()).ok()?;
        if q.is_zero() {
            return None;
        }
        return Some(Rational::new(p, q));
    }
    if let Ok(n) = BigInt::from_str(s) {
        return Some(Rational::from_integer(n));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (whole, frac) = body.split_once('.')?;
    if whole.is_empty() && frac.is_empty() {
        return None;
    }
    if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{whole}{frac}");
    let numer = BigInt::from_str(&digits).ok()?;
    let denom = num_traits::pow(BigInt::from(10u8), frac.len());
    let r = Rational::new(numer, denom);
    Some(if neg { -r } else { r })
}

fn as_exact_f64(x: &Rational) -> Option<f64> {
    let f = x.to_f64()?;
    if f.is_finite() && from_f64(f).as_ref() == Some(x) {
        Some(f)
    } else {
        None
    }
}

fn render(x: &Rational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// `serde(with = "crate::exact::serde_rational")` adapter.
pub mod serde_rational {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Rational, s: S) -> Result<S::Ok, S::Error> {
        if x.denom().is_one() {
            if let Some(i) = x.numer().to_i64() {
                return s.serialize_i64(i);
            }
        }
        match as_exact_f64(x) {
            Some(f) => s.serialize_f64(f),
            None => s.serialize_str(&render(x)),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        d.deserialize_any(RationalVisitor)
    }
}

/// `serde(serialize_with = "crate::exact::serde_f64::serialize")`: nearest `f64`,
/// for display-oriented payloads.
pub mod serde_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(to_f64(x))
    }
}

struct RationalVisitor;

impl Visitor<'_> for RationalVisitor {
    type Value = Rational;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or a \"p/q\" rational string")
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rational, E> {
        Ok(int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rational, E> {
        Ok(Rational::from_integer(BigInt::from(v)))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Rational, E> {
        from_f64(v).ok_or_else(|| E::custom("non-finite number"))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Rational, E> {
        parse(v).ok_or_else(|| E::custom(format!("invalid rational {v:?}")))
    }
}

/// A non-negative descriptor weight.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Weight(Rational);

impl Weight {
    pub fn new(value: Rational) -> Option<Self> {
        (!value.is_negative()).then_some(Weight(value))
    }

    pub fn one() -> Self {
        Weight(Rational::one())
    }

    pub fn zero() -> Self {
        Weight(Rational::zero())
    }

    pub fn from_f64(x: f64) -> Option<Self> {
        from_f64(x).and_then(Self::new)
    }

    pub fn value(&self) -> &Rational {
        &self.0
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn scaled(&self, factor: &Rational) -> Option<Self> {
        Self::new(&self.0 * factor)
    }

    pub fn to_f64(&self) -> f64 {
        to_f64(&self.0)
    }
}

impl Default for Weight {
    fn default() -> Self {
        Weight::one()
    }
}

impl From<u32> for Weight {
    fn from(n: u32) -> Self {
        Weight(int(n.into()))
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match as_exact_f64(&self.0) {
            Some(x) => write!(f, "{x}"),
            None => f.write_str(&render(&self.0)),
        }
    }
}

impl Serialize for Weight {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serde_rational::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = serde_rational::deserialize(d)?;
        Weight::new(r).ok_or_else(|| de::Error::custom("weight must be non-negative"))
    }
}
