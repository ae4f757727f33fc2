//! Exact-or-float scalar arithmetic.
//!
//! Every quantity in this crate is a [`Scalar`]: an exact big rational when the
//! inputs were rational, an IEEE double otherwise. Arithmetic stays rational as
//! long as both operands are rational; any float operand contaminates the
//! result. Irrational operations (general roots, powers) move to the float
//! branch, except square roots of perfect squares, which stay exact.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;
use std::sync::OnceLock;

/// Default absolute comparison tolerance. Overridable via `FIBERLIB_TOL`.
pub fn default_tol() -> f64 {
    static TOL: OnceLock<f64> = OnceLock::new();
    *TOL.get_or_init(|| {
        std::env::var("FIBERLIB_TOL")
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|t| *t > 0.0)
            .unwrap_or(1e-12)
    })
}

/// A real number, carried exactly while the computation allows it.
#[derive(Clone, Debug)]
pub enum Scalar {
    Rat(BigRational),
    Fl(f64),
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar::Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Scalar::Rat(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Scalar::Rat(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Scalar::Rat(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    /// Exact lift: every finite f64 is a dyadic rational.
    pub fn rational_from_f64(x: f64) -> Option<Self> {
        BigRational::from_f64(x).map(Scalar::Rat)
    }

    pub fn is_rational(&self) -> bool {
        matches!(self, Scalar::Rat(_))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Rat(r) => r.is_zero(),
            Scalar::Fl(x) => *x == 0.0,
        }
    }

    pub fn is_negative(&self) -> bool {
        match self {
            Scalar::Rat(r) => r.is_negative(),
            Scalar::Fl(x) => *x < 0.0,
        }
    }

    pub fn is_positive(&self) -> bool {
        match self {
            Scalar::Rat(r) => r.is_positive(),
            Scalar::Fl(x) => *x > 0.0,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Rat(r) => r.to_f64().unwrap_or(f64::NAN),
            Scalar::Fl(x) => *x,
        }
    }

    pub fn abs(&self) -> Self {
        match self {
            Scalar::Rat(r) => Scalar::Rat(r.abs()),
            Scalar::Fl(x) => Scalar::Fl(x.abs()),
        }
    }

    pub fn signum_int(&self) -> i64 {
        match self {
            Scalar::Rat(r) => {
                if r.is_positive() {
                    1
                } else if r.is_negative() {
                    -1
                } else {
                    0
                }
            }
            Scalar::Fl(x) => {
                if *x > 0.0 {
                    1
                } else if *x < 0.0 {
                    -1
                } else {
                    0
                }
            }
        }
    }

    pub fn min(self, other: Scalar) -> Scalar {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Scalar) -> Scalar {
        if other > self {
            other
        } else {
            self
        }
    }

    /// `min(self, 1)`, the truncation used by the L0 distance.
    pub fn clamp_one(self) -> Scalar {
        self.min(Scalar::one())
    }

    pub fn recip(&self) -> Scalar {
        match self {
            Scalar::Rat(r) => {
                assert!(!r.is_zero(), "reciprocal of zero");
                Scalar::Rat(r.recip())
            }
            Scalar::Fl(x) => Scalar::Fl(1.0 / x),
        }
    }

    /// Exact square root when the operand is a perfect rational square,
    /// float square root otherwise. Negative operands are a caller bug.
    pub fn sqrt(&self) -> Scalar {
        match self {
            Scalar::Rat(r) => {
                assert!(!r.is_negative(), "sqrt of negative scalar");
                let num = r.numer().sqrt();
                let den = r.denom().sqrt();
                if &(&num * &num) == r.numer() && &(&den * &den) == r.denom() {
                    Scalar::Rat(BigRational::new(num, den))
                } else {
                    Scalar::Fl(self.to_f64().sqrt())
                }
            }
            Scalar::Fl(x) => Scalar::Fl(x.sqrt()),
        }
    }

    /// Integer power, exact on rationals.
    pub fn powi(&self, n: i32) -> Scalar {
        match self {
            Scalar::Rat(r) => Scalar::Rat(r.pow(n)),
            Scalar::Fl(x) => Scalar::Fl(x.powi(n)),
        }
    }

    /// Real power; always the float branch.
    pub fn powf(&self, p: f64) -> Scalar {
        Scalar::Fl(self.to_f64().powf(p))
    }

    /// |self - other| <= tol, with the difference computed exactly when possible.
    pub fn approx_eq(&self, other: &Scalar, tol: f64) -> bool {
        let d = (self.clone() - other.clone()).abs();
        match d {
            Scalar::Rat(r) => r.to_f64().map(|x| x <= tol).unwrap_or(false),
            Scalar::Fl(x) => x <= tol,
        }
    }

    /// Lower the scalar to the float branch.
    pub fn to_float(&self) -> Scalar {
        Scalar::Fl(self.to_f64())
    }

    /// Promote to an exact rational (exact for floats: dyadic lift).
    pub fn to_rational(&self) -> Option<BigRational> {
        match self {
            Scalar::Rat(r) => Some(r.clone()),
            Scalar::Fl(x) => BigRational::from_f64(*x),
        }
    }
}

fn binop<FR, FF>(a: &Scalar, b: &Scalar, fr: FR, ff: FF) -> Scalar
where
    FR: Fn(&BigRational, &BigRational) -> BigRational,
    FF: Fn(f64, f64) -> f64,
{
    match (a, b) {
        (Scalar::Rat(x), Scalar::Rat(y)) => Scalar::Rat(fr(x, y)),
        _ => Scalar::Fl(ff(a.to_f64(), b.to_f64())),
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                binop(&self, &rhs, |a, b| a $op b, |a, b| a $op b)
            }
        }
        impl<'a> $trait<&'a Scalar> for &'a Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &'a Scalar) -> Scalar {
                binop(self, rhs, |a, b| a $op b, |a, b| a $op b)
            }
        }
    };
}

impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);
impl_binop!(Mul, mul, *);
impl_binop!(Div, div, /);

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        match self {
            Scalar::Rat(r) => Scalar::Rat(-r),
            Scalar::Fl(x) => Scalar::Fl(-x),
        }
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => a == b,
            _ => self.to_f64() == other.to_f64(),
        }
    }
}

impl Eq for Scalar {}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scalar {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Scalar::Rat(a), Scalar::Rat(b)) => a.cmp(b),
            // Mixed comparisons go through f64; NaN never appears in valid data.
            _ => self
                .to_f64()
                .partial_cmp(&other.to_f64())
                .unwrap_or(Ordering::Equal),
        }
    }
}

impl std::hash::Hash for Scalar {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Scalar::Rat(r) => {
                0u8.hash(state);
                r.hash(state);
            }
            Scalar::Fl(x) => {
                1u8.hash(state);
                x.to_bits().hash(state);
            }
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Rat(r) => {
                if r.is_integer() {
                    write!(f, "{}", r.numer())
                } else {
                    write!(f, "{}/{}", r.numer(), r.denom())
                }
            }
            Scalar::Fl(x) => write!(f, "{x}"),
        }
    }
}

impl FromStr for Scalar {
    type Err = String;

    /// Accepts "p/q", plain integers, and decimal floats.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            let n = BigInt::from_str(num.trim()).map_err(|e| e.to_string())?;
            let d = BigInt::from_str(den.trim()).map_err(|e| e.to_string())?;
            if d.is_zero() {
                return Err(format!("zero denominator in '{s}'"));
            }
            Ok(Scalar::Rat(BigRational::new(n, d)))
        } else if let Ok(n) = BigInt::from_str(s) {
            Ok(Scalar::Rat(BigRational::from_integer(n)))
        } else {
            s.parse::<f64>()
                .map(Scalar::Fl)
                .map_err(|_| format!("cannot parse scalar '{s}'"))
        }
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Rat(r) => {
                if r.is_integer() {
                    if let Some(n) = r.numer().to_i64() {
                        return serializer.serialize_i64(n);
                    }
                }
                serializer.serialize_str(&self.to_string())
            }
            Scalar::Fl(x) => serializer.serialize_f64(*x),
        }
    }
}

struct ScalarVisitor;

impl<'de> Visitor<'de> for ScalarVisitor {
    type Value = Scalar;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or a 'p/q' string")
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Scalar, E> {
        Ok(Scalar::from_int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Scalar, E> {
        Ok(Scalar::Rat(BigRational::from_integer(BigInt::from(v))))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Scalar, E> {
        Ok(Scalar::Fl(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Scalar, E> {
        Scalar::from_str(v).map_err(de::Error::custom)
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Scalar, D::Error> {
        deserializer.deserialize_any(ScalarVisitor)
    }
}

/// Sum over an iterator, seeded with the exact zero.
pub fn ssum<'a, I: IntoIterator<Item = &'a Scalar>>(iter: I) -> Scalar {
    iter.into_iter()
        .fold(Scalar::zero(), |acc, x| acc + x.clone())
}

/// Dot product of equal-length slices.
pub fn sdot(a: &[Scalar], b: &[Scalar]) -> Scalar {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(Scalar::zero(), |acc, (x, y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_arithmetic_stays_exact() {
        let a = Scalar::ratio(1, 3);
        let b = Scalar::ratio(1, 6);
        let s = a.clone() + b.clone();
        assert_eq!(s, Scalar::ratio(1, 2));
        assert!(s.is_rational());
        assert_eq!(a * b, Scalar::ratio(1, 18));
    }

    #[test]
    fn float_contaminates() {
        let a = Scalar::ratio(1, 3);
        let b = Scalar::Fl(0.5);
        assert!(!(a + b).is_rational());
    }

    #[test]
    fn sqrt_of_perfect_square_is_exact() {
        let s = Scalar::ratio(9, 4).sqrt();
        assert!(s.is_rational());
        assert_eq!(s, Scalar::ratio(3, 2));
        assert!(!Scalar::from_int(2).sqrt().is_rational());
    }

    #[test]
    fn parse_and_display_round_trip() {
        for txt in ["3", "-7/2", "0"] {
            let s: Scalar = txt.parse().unwrap();
            assert_eq!(s.to_string(), txt);
        }
        let f: Scalar = "0.25".parse().unwrap();
        assert!(!f.is_rational());
        assert_eq!(f.to_f64(), 0.25);
    }

    #[test]
    fn json_number_and_string_forms() {
        let v: Vec<Scalar> = serde_json::from_str(r#"[1, "1/2", 0.5]"#).unwrap();
        assert!(v[0].is_rational());
        assert!(v[1].is_rational());
        assert!(!v[2].is_rational());
        assert_eq!(v[1].to_f64(), 0.5);
        let back = serde_json::to_string(&v).unwrap();
        assert_eq!(back, r#"[1,"1/2",0.5]"#);
    }

    #[test]
    fn ordering_min_max_clamp() {
        let a = Scalar::ratio(3, 2);
        assert_eq!(a.clone().clamp_one(), Scalar::one());
        assert_eq!(Scalar::ratio(1, 2).clamp_one(), Scalar::ratio(1, 2));
        assert!(Scalar::from_int(-1) < Scalar::Fl(0.5));
        assert_eq!(
            Scalar::from_int(2).max(Scalar::from_int(5)),
            Scalar::from_int(5)
        );
    }
}
