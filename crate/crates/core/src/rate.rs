//! Exact rational rates.
//!
//! Every key rate, quota fraction and budget in the crate is an exact
//! rational so that quota arithmetic such as `1/8 * 8` stays bit-stable.
//! Hot loops that multiply many rationals together (the LP solver, the
//! water-filling routine, the updater) widen to [`BigRational`] internally.

use std::fmt;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserializer, Serializer};

/// Blocks per tick, quota fractions and budgets.
pub type Rate = Ratio<i64>;

/// Largest denominator kept when a widened value is narrowed back to [`Rate`].
pub const MAX_DENOMINATOR: i64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid rational '{0}': expected an integer, a decimal or 'p/q'")]
pub struct ParseRateError(pub String);

pub fn int(n: i64) -> Rate {
    Rate::from_integer(n)
}

pub fn frac(n: i64, d: i64) -> Rate {
    Rate::new(n, d)
}

/// Parses `"3"`, `"-2"`, `"1/8"` or an exact decimal such as `"4.5"`.
pub fn parse_rate(text: &str) -> Result<Rate, ParseRateError> {
    let err = || ParseRateError(text.to_string());
    let s = text.trim();
    if s.is_empty() {
        return Err(err());
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| err())?;
        let d: i64 = d.trim().parse().map_err(|_| err())?;
        if d == 0 {
            return Err(err());
        }
        return Ok(Rate::new(n, d));
    }
    if let Some((whole, fraction)) = s.split_once('.') {
        if fraction.is_empty() || !fraction.bytes().all(|b| b.is_ascii_digit()) || fraction.len() > 12 {
            return Err(err());
        }
        let negative = whole.starts_with('-');
        let whole_digits = whole.trim_start_matches(['-', '+']);
        let w: i64 = if whole_digits.is_empty() {
            0
        } else {
            whole_digits.parse().map_err(|_| err())?
        };
        let scale = 10i64.pow(fraction.len() as u32);
        let f: i64 = fraction.parse().map_err(|_| err())?;
        let magnitude = w
            .checked_mul(scale)
            .and_then(|v| v.checked_add(f))
            .ok_or_else(err)?;
        let numer = if negative { -magnitude } else { magnitude };
        return Ok(Rate::new(numer, scale));
    }
    let n: i64 = s.parse().map_err(|_| err())?;
    Ok(Rate::from_integer(n))
}

/// Renders `p/q`, or just `p` for integers.
pub fn format_rate(r: &Rate) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn to_f64(r: &Rate) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn big(r: &Rate) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

pub fn big_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn format_big(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Narrows a wide rational back to a [`Rate`].
///
/// Values whose denominator already fits under [`MAX_DENOMINATOR`] are kept
/// exactly; others are rounded down onto the `1/MAX_DENOMINATOR` grid.
/// Returns `None` when the integer part does not fit in an `i64`.
pub fn narrow(r: &BigRational) -> Option<Rate> {
    let limit = BigInt::from(MAX_DENOMINATOR);
    if r.denom() <= &limit {
        return Some(Rate::new(r.numer().to_i64()?, r.denom().to_i64()?));
    }
    let scaled = (r * BigRational::from_integer(limit)).floor();
    Some(Rate::new(scaled.to_integer().to_i64()?, MAX_DENOMINATOR))
}

/// Largest integer not above `r`, for nonnegative rates.
pub fn floor_u64(r: &Rate) -> u64 {
    if r.is_negative() {
        0
    } else {
        (r.numer() / r.denom()) as u64
    }
}

pub fn is_unit_interval(r: &Rate) -> bool {
    !r.is_negative() && r <= &Rate::one()
}

pub fn zero() -> Rate {
    Rate::zero()
}

/// `Display` adapter printing `p/q`.
pub struct Show<'a>(pub &'a Rate);

impl fmt::Display for Show<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rate(self.0))
    }
}

/// Serde adapter: rates are written as strings (`"1/8"`) and read from
/// integers, JSON floats with a short decimal form, or strings.
pub mod serde_rate {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rate, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rate(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rate, D::Error> {
        d.deserialize_any(RateVisitor)
    }

    struct RateVisitor;

    impl<'de> Visitor<'de> for RateVisitor {
        type Value = Rate;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("an integer, a decimal, or a 'p/q' string")
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rate, E> {
            Ok(Rate::from_integer(v))
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rate, E> {
            i64::try_from(v)
                .map(Rate::from_integer)
                .map_err(|_| E::custom("rate out of range"))
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<Rate, E> {
            if !v.is_finite() {
                return Err(E::custom("rate must be finite"));
            }
            // The shortest round-trip representation is what the author typed.
            parse_rate(&format!("{v}")).map_err(E::custom)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<Rate, E> {
            parse_rate(v).map_err(E::custom)
        }
    }
}

/// Same as [`serde_rate`] for `Option<Rate>`.
pub mod serde_rate_opt {
    use super::*;
    use serde::Deserialize;

    pub fn serialize<S: Serializer>(r: &Option<Rate>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_str(&format_rate(r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rate>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::serde_rate")] Rate);
        Option::<Wrap>::deserialize(d).map(|w| w.map(|Wrap(r)| r))
    }
}
