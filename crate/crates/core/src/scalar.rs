//! Coefficient fields for the polynomial engine and the mixed exact/real
//! scalar used for γ and μ tables.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Field of polynomial coefficients. Implemented for exact rationals and `f64`.
pub trait Coeff: Clone + fmt::Debug + PartialEq + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn from_i64(v: i64) -> Self;
    fn add_assign_ref(&mut self, other: &Self);
    fn mul_ref(&self, other: &Self) -> Self;
    fn neg_ref(&self) -> Self;
    fn to_f64(&self) -> f64;
    fn to_scalar(&self) -> Scalar;
    /// Multiply by a small nonnegative integer (exponents from differentiation).
    fn scale_int(&self, k: u32) -> Self;
}

impl Coeff for Rational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn from_i64(v: i64) -> Self {
        Rational::from_integer(BigInt::from(v))
    }
    fn add_assign_ref(&mut self, other: &Self) {
        *self += other;
    }
    fn mul_ref(&self, other: &Self) -> Self {
        self * other
    }
    fn neg_ref(&self) -> Self {
        -self
    }
    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }
    fn to_scalar(&self) -> Scalar {
        Scalar::Exact(self.clone())
    }
    fn scale_int(&self, k: u32) -> Self {
        self * Rational::from_integer(BigInt::from(k))
    }
}

impl Coeff for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn add_assign_ref(&mut self, other: &Self) {
        *self += *other;
    }
    fn mul_ref(&self, other: &Self) -> Self {
        self * other
    }
    fn neg_ref(&self) -> Self {
        -self
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn to_scalar(&self) -> Scalar {
        Scalar::Real(*self)
    }
    fn scale_int(&self, k: u32) -> Self {
        self * k as f64
    }
}

/// Rational to nearest-ish `f64`; survives numerators and denominators that
/// overflow `f64` individually.
pub fn rational_to_f64(r: &Rational) -> f64 {
    if let Some(v) = ToPrimitive::to_f64(r) {
        if v.is_finite() {
            return v;
        }
    }
    let num = r.numer();
    let den = r.denom();
    let shift = num.bits() as i64 - den.bits() as i64;
    // bring both into range, keeping ~60 significant bits of the quotient
    let (n, d) = if shift > 0 {
        (num.clone(), den.clone() << (shift as usize))
    } else {
        (num.clone() << ((-shift) as usize), den.clone())
    };
    let q = Rational::new(n << 64usize, d);
    let mant = q.to_integer().to_f64().unwrap_or(f64::NAN);
    mant * 2f64.powi((shift - 64) as i32)
}

/// Exact binary value of a finite `f64`.
pub fn rational_from_f64(x: f64) -> Result<Rational> {
    Rational::from_float(x)
        .ok_or_else(|| Error::InvalidParameter(format!("{x} is not a finite number")))
}

/// Rational equal to the shortest decimal representation of `x`, so that a
/// configured `0.01` becomes exactly `1/100` rather than its binary neighbour.
pub fn rational_from_decimal(x: f64) -> Result<Rational> {
    if !x.is_finite() {
        return Err(Error::InvalidParameter(format!("{x} is not a finite number")));
    }
    parse_decimal(&format!("{x:e}"))
}

/// Parse `[-]digits[.digits][e[-]exp]` into an exact rational.
pub fn parse_decimal(s: &str) -> Result<Rational> {
    let bad = || Error::Format(format!("cannot parse {s:?} as a decimal number"));
    let s = s.trim();
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let numer: BigInt = digits.parse().map_err(|_| bad())?;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = if scale >= 0 {
        Rational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        r = -r;
    }
    Ok(r)
}

/// A coefficient that stays exact for as long as its inputs are exact.
#[derive(Clone, Debug, PartialEq)]
pub enum Scalar {
    Exact(Rational),
    Real(f64),
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar::Exact(<Rational as Zero>::zero())
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Exact(r) => rational_to_f64(r),
            Scalar::Real(x) => *x,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Scalar::Exact(_))
    }

    /// True only for an exact rational zero or a real that is exactly `0.0`.
    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Exact(r) => Zero::is_zero(r),
            Scalar::Real(x) => *x == 0.0,
        }
    }

    pub fn as_exact(&self) -> Option<&Rational> {
        match self {
            Scalar::Exact(r) => Some(r),
            Scalar::Real(_) => None,
        }
    }

    pub fn abs(&self) -> Scalar {
        match self {
            Scalar::Exact(r) => Scalar::Exact(r.abs()),
            Scalar::Real(x) => Scalar::Real(x.abs()),
        }
    }

    fn combine(
        &self,
        other: &Scalar,
        exact: impl FnOnce(&Rational, &Rational) -> Rational,
        real: impl FnOnce(f64, f64) -> f64,
    ) -> Scalar {
        match (self, other) {
            (Scalar::Exact(a), Scalar::Exact(b)) => Scalar::Exact(exact(a, b)),
            _ => Scalar::Real(real(self.to_f64(), other.to_f64())),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Exact(r) => write!(f, "{r}"),
            Scalar::Real(x) => write!(f, "{x}"),
        }
    }
}

impl std::ops::Add for &Scalar {
    type Output = Scalar;
    fn add(self, rhs: &Scalar) -> Scalar {
        self.combine(rhs, |a, b| a + b, |a, b| a + b)
    }
}

impl std::ops::Sub for &Scalar {
    type Output = Scalar;
    fn sub(self, rhs: &Scalar) -> Scalar {
        self.combine(rhs, |a, b| a - b, |a, b| a - b)
    }
}

// an exact zero stays exact through products and quotients with finite reals
fn exact_zero_absorbs(a: &Scalar, b: &Scalar) -> bool {
    let zero_exact = |s: &Scalar| matches!(s, Scalar::Exact(r) if Zero::is_zero(r));
    (zero_exact(a) && b.to_f64().is_finite()) || (zero_exact(b) && a.to_f64().is_finite())
}

impl std::ops::Mul for &Scalar {
    type Output = Scalar;
    fn mul(self, rhs: &Scalar) -> Scalar {
        if exact_zero_absorbs(self, rhs) {
            return Scalar::zero();
        }
        self.combine(rhs, |a, b| a * b, |a, b| a * b)
    }
}

impl std::ops::Div for &Scalar {
    type Output = Scalar;
    fn div(self, rhs: &Scalar) -> Scalar {
        if matches!(self, Scalar::Exact(r) if Zero::is_zero(r)) && !rhs.is_zero() && rhs.to_f64().is_finite() {
            return Scalar::zero();
        }
        self.combine(rhs, |a, b| a / b, |a, b| a / b)
    }
}

impl std::ops::Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        match self {
            Scalar::Exact(r) => Scalar::Exact(-r),
            Scalar::Real(x) => Scalar::Real(-x),
        }
    }
}

/// Serialized as `{"exact": "p/q", "value": f64}` or `{"value": f64}`.
#[derive(Serialize, Deserialize)]
struct ScalarRepr {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    exact: Option<String>,
    value: f64,
}

impl Serialize for Scalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = ScalarRepr {
            exact: self.as_exact().map(|r| r.to_string()),
            value: self.to_f64(),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ScalarRepr::deserialize(d)?;
        match repr.exact {
            Some(text) => text
                .parse::<Rational>()
                .map(Scalar::Exact)
                .map_err(serde::de::Error::custom),
            None => Ok(Scalar::Real(repr.value)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(rational_from_decimal(0.01).unwrap(), q(1, 100));
        assert_eq!(rational_from_decimal(-2.5).unwrap(), q(-5, 2));
        assert_eq!(rational_from_decimal(40.0).unwrap(), q(40, 1));
        assert_eq!(parse_decimal("1.25e-3").unwrap(), q(1, 800));
        assert!(parse_decimal("abc").is_err());
    }

    #[test]
    fn huge_rationals_convert_to_f64() {
        let big = num_traits::pow(BigInt::from(10), 400);
        let r = Rational::new(big.clone() * BigInt::from(3), big * BigInt::from(4));
        assert_eq!(rational_to_f64(&r), 0.75);
        let tiny = Rational::new(BigInt::from(1), num_traits::pow(BigInt::from(2), 1030));
        let v = rational_to_f64(&tiny);
        assert!(v == 0.0 || (v > 0.0 && v < 1e-300));
    }

    #[test]
    fn scalar_stays_exact_until_mixed() {
        let a = Scalar::Exact(q(1, 3));
        let b = Scalar::Exact(q(2, 3));
        assert_eq!(&a + &b, Scalar::Exact(q(1, 1)));
        let c = Scalar::Real(0.5);
        assert!(!(&a * &c).is_exact());
        let json = serde_json::to_string(&a).unwrap();
        let back: Scalar = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn exact_zero_survives_mixing_with_reals() {
        let z = Scalar::zero();
        let x = Scalar::Real(2.5);
        assert!((&z * &x).is_exact());
        assert!((&z / &x).is_exact());
        assert!(!(&z + &x).is_exact());
        assert!(!(&x / &z).is_exact());
    }
}
