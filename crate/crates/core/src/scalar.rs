//! Exact rational scalars and closed intervals.
//!
//! Every 1D computation in the crate runs on [`Scalar`], an arbitrary
//! precision rational, so comparisons against shadowing bounds carry no
//! rounding error.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Scalar = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse `{input}` as a rational: {reason}")]
pub struct ParseScalarError {
    pub input: String,
    pub reason: &'static str,
}

/// `n/d` as a scalar. Panics if `d == 0`.
pub fn rat(n: i64, d: i64) -> Scalar {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Scalar {
    BigRational::from_integer(BigInt::from(n))
}

/// `2^e` for any integer exponent.
pub fn pow2(e: i64) -> Scalar {
    let m = BigInt::one() << e.unsigned_abs();
    if e >= 0 {
        BigRational::from_integer(m)
    } else {
        BigRational::new(BigInt::one(), m)
    }
}

pub fn pow(base: &Scalar, e: u32) -> Scalar {
    num_traits::pow(base.clone(), e as usize)
}

pub fn abs_diff(a: &Scalar, b: &Scalar) -> Scalar {
    (a - b).abs()
}

pub fn max_of<'a>(xs: impl IntoIterator<Item = &'a Scalar>) -> Option<Scalar> {
    xs.into_iter().max().cloned()
}

pub fn to_f64(x: &Scalar) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Largest integer `j` with `j <= x`.
pub fn floor_int(x: &Scalar) -> BigInt {
    x.numer().div_floor(x.denom())
}

/// Parses `p/q`, an integer, or a finite decimal (`0.125`, `-1.5e-3`) exactly.
pub fn parse_scalar(input: &str) -> Result<Scalar, ParseScalarError> {
    let s = input.trim();
    let err = |reason| ParseScalarError {
        input: input.to_string(),
        reason,
    };
    if s.is_empty() {
        return Err(err("empty string"));
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| err("bad numerator"))?;
        let d: BigInt = d.trim().parse().map_err(|_| err("bad denominator"))?;
        if d.is_zero() {
            return Err(err("zero denominator"));
        }
        return Ok(BigRational::new(n, d));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i64 = s[i + 1..].parse().map_err(|_| err("bad exponent"))?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (whole, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(err("no digits"));
    }
    if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(err("unexpected character"));
    }
    if exponent.unsigned_abs() > 4096 {
        return Err(err("exponent out of range"));
    }
    let all: BigInt = format!("{whole}{frac}0").parse().map_err(|_| err("bad digits"))?;
    let all = all / BigInt::from(10);
    let scale = exponent - frac.len() as i64;
    let ten = BigInt::from(10);
    let mut value = if scale >= 0 {
        BigRational::from_integer(all * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(all, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        value = -value;
    }
    Ok(value)
}

/// A closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[String; 2]", into = "[String; 2]")]
pub struct Interval {
    lo: Scalar,
    hi: Scalar,
}

impl Interval {
    /// Returns `None` when `lo > hi`.
    pub fn new(lo: Scalar, hi: Scalar) -> Option<Self> {
        (lo <= hi).then_some(Interval { lo, hi })
    }

    /// Builds the hull of two endpoints in either order.
    pub fn spanning(a: Scalar, b: Scalar) -> Self {
        if a <= b {
            Interval { lo: a, hi: b }
        } else {
            Interval { lo: b, hi: a }
        }
    }

    pub fn point(x: Scalar) -> Self {
        Interval {
            lo: x.clone(),
            hi: x,
        }
    }

    /// `[center - radius, center + radius]`; a negative radius is treated as zero.
    pub fn ball(center: &Scalar, radius: &Scalar) -> Self {
        let r = if radius.is_negative() {
            Scalar::zero()
        } else {
            radius.clone()
        };
        Interval {
            lo: center - &r,
            hi: center + &r,
        }
    }

    pub fn lo(&self) -> &Scalar {
        &self.lo
    }

    pub fn hi(&self) -> &Scalar {
        &self.hi
    }

    pub fn width(&self) -> Scalar {
        &self.hi - &self.lo
    }

    pub fn radius(&self) -> Scalar {
        self.width() / int(2)
    }

    pub fn midpoint(&self) -> Scalar {
        (&self.lo + &self.hi) / int(2)
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: &Scalar) -> bool {
        &self.lo <= x && x <= &self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        Interval::new(
            (&self.lo).max(&other.lo).clone(),
            (&self.hi).min(&other.hi).clone(),
        )
    }

    /// True when the intersection has positive length.
    pub fn overlaps_interior(&self, other: &Interval) -> bool {
        (&self.lo).max(&other.lo) < (&self.hi).min(&other.hi)
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: (&self.lo).min(&other.lo).clone(),
            hi: (&self.hi).max(&other.hi).clone(),
        }
    }

    /// Inward shrink by `delta` on both sides; `None` when it empties the interval.
    pub fn shrink(&self, delta: &Scalar) -> Option<Interval> {
        Interval::new(&self.lo + delta, &self.hi - delta)
    }

    pub fn expand(&self, delta: &Scalar) -> Interval {
        Interval::spanning(&self.lo - delta, &self.hi + delta)
    }

    pub fn distance_to(&self, x: &Scalar) -> Scalar {
        if x < &self.lo {
            &self.lo - x
        } else if x > &self.hi {
            x - &self.hi
        } else {
            Scalar::zero()
        }
    }

    /// Nearest point of the interval to `x`.
    pub fn clamp(&self, x: &Scalar) -> Scalar {
        x.clamp(&self.lo, &self.hi).clone()
    }

    pub fn negate(&self) -> Interval {
        Interval {
            lo: -&self.hi,
            hi: -&self.lo,
        }
    }

    pub fn to_f64(&self) -> (f64, f64) {
        (to_f64(&self.lo), to_f64(&self.hi))
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl TryFrom<[String; 2]> for Interval {
    type Error = String;

    fn try_from(value: [String; 2]) -> Result<Self, Self::Error> {
        let lo = parse_scalar(&value[0]).map_err(|e| e.to_string())?;
        let hi = parse_scalar(&value[1]).map_err(|e| e.to_string())?;
        Interval::new(lo, hi).ok_or_else(|| format!("empty interval [{}, {}]", value[0], value[1]))
    }
}

impl From<Interval> for [String; 2] {
    fn from(value: Interval) -> Self {
        [value.lo.to_string(), value.hi.to_string()]
    }
}

/// Serde adapters that write rationals as `"p/q"` strings.
pub mod serde_rational {
    use super::{parse_scalar, Scalar};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Scalar, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Scalar, D::Error> {
        let raw = RationalRepr::deserialize(d)?;
        raw.into_scalar().map_err(D::Error::custom)
    }

    /// Accepts `"p/q"` strings as well as bare JSON integers.
    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(crate) enum RationalRepr {
        Text(String),
        Int(i64),
    }

    impl RationalRepr {
        pub(crate) fn into_scalar(self) -> Result<Scalar, String> {
            match self {
                RationalRepr::Text(t) => parse_scalar(&t).map_err(|e| e.to_string()),
                RationalRepr::Int(i) => Ok(super::int(i)),
            }
        }
    }

    pub mod vec {
        use super::{RationalRepr, Scalar};
        use serde::{de::Error, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(xs: &[Scalar], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(xs.len()))?;
            for x in xs {
                seq.serialize_element(&x.to_string())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Scalar>, D::Error> {
            let raw = Vec::<RationalRepr>::deserialize(d)?;
            raw.into_iter()
                .map(|r| r.into_scalar().map_err(D::Error::custom))
                .collect()
        }
    }

    pub mod option {
        use super::Scalar;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(x: &Option<Scalar>, s: S) -> Result<S::Ok, S::Error> {
            match x {
                Some(v) => s.serialize_some(&v.to_string()),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Scalar>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] Scalar);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_integers_and_decimals() {
        assert_eq!(parse_scalar("-13/12").unwrap(), rat(-13, 12));
        assert_eq!(parse_scalar("4").unwrap(), int(4));
        assert_eq!(parse_scalar("0.125").unwrap(), rat(1, 8));
        assert_eq!(parse_scalar("-1.5e-3").unwrap(), rat(-3, 2000));
        assert_eq!(parse_scalar("1e3").unwrap(), int(1000));
        assert_eq!(parse_scalar(".5").unwrap(), rat(1, 2));
        assert!(parse_scalar("1/0").is_err());
        assert!(parse_scalar("abc").is_err());
        assert!(parse_scalar("").is_err());
    }

    #[test]
    fn pow2_handles_negative_exponents() {
        assert_eq!(pow2(-3), rat(1, 8));
        assert_eq!(pow2(0), int(1));
        assert_eq!(pow2(5), int(32));
    }

    #[test]
    fn interval_shrink_and_distance() {
        let g = Interval::new(rat(-1, 3), rat(1, 3)).unwrap();
        assert_eq!(g.shrink(&rat(1, 3)), Some(Interval::point(int(0))));
        assert_eq!(g.shrink(&rat(1, 2)), None);
        assert_eq!(g.distance_to(&int(1)), rat(2, 3));
        assert_eq!(g.clamp(&int(-5)), rat(-1, 3));
        assert!(Interval::new(int(1), int(0)).is_none());
    }

    #[test]
    fn interval_serde_uses_rational_strings() {
        let i = Interval::new(rat(-7, 6), rat(4, 3)).unwrap();
        let json = serde_json::to_string(&i).unwrap();
        assert_eq!(json, r#"["-7/6","4/3"]"#);
        let back: Interval = serde_json::from_str(&json).unwrap();
        assert_eq!(back, i);
        assert!(serde_json::from_str::<Interval>(r#"["1","0"]"#).is_err());
    }
}
