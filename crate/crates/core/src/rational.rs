//! Exact rational arithmetic helpers.
//!
//! Privacy-loss budgets are carried as `BigRational` end to end: config
//! values like `0.159` parse to exactly 159/1000, so budget conservation can
//! be asserted as rational equality instead of float comparison.

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Nonnegative rational, the domain of noise-scale parameters.
pub type URational = Ratio<BigUint>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RationalError {
    #[error("empty numeric value")]
    Empty,
    #[error("malformed decimal value {0:?}")]
    Malformed(String),
    #[error("value {0:?} is negative where a nonnegative value is required")]
    Negative(String),
}

/// Parses a decimal string (`2.134`, `0.9999`, `-3`, `1/4`) to an exact
/// rational. `a.b` becomes `a*10^k + b` over `10^k`; no float round-trip.
pub fn parse_decimal(s: &str) -> Result<BigRational, RationalError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(RationalError::Empty);
    }
    if let Some((num, den)) = s.split_once('/') {
        let num: BigInt = num
            .trim()
            .parse()
            .map_err(|_| RationalError::Malformed(s.to_string()))?;
        let den: BigInt = den
            .trim()
            .parse()
            .map_err(|_| RationalError::Malformed(s.to_string()))?;
        if den.is_zero() {
            return Err(RationalError::Malformed(s.to_string()));
        }
        return Ok(BigRational::new(num, den));
    }
    let (sign, digits) = match s.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(RationalError::Malformed(s.to_string()));
    }
    let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || !all_digits(frac_part) {
        return Err(RationalError::Malformed(s.to_string()));
    }
    let joined = format!("{int_part}{frac_part}");
    let numer: BigInt = if joined.is_empty() {
        BigInt::zero()
    } else {
        joined
            .parse()
            .map_err(|_| RationalError::Malformed(s.to_string()))?
    };
    let denom = BigInt::from(10u8).pow(frac_part.len() as u32);
    Ok(BigRational::new(numer * sign, denom))
}

/// Parses a decimal that must be nonnegative.
pub fn parse_nonnegative(s: &str) -> Result<BigRational, RationalError> {
    let v = parse_decimal(s)?;
    if v.is_negative() {
        return Err(RationalError::Negative(s.to_string()));
    }
    Ok(v)
}

/// Converts a nonnegative `BigRational` to `Ratio<BigUint>`.
///
/// Panics if the value is negative; callers hold the nonnegativity invariant.
pub fn to_unsigned(v: &BigRational) -> URational {
    assert!(!v.is_negative(), "negative rational in unsigned context");
    let (_, numer) = v.numer().clone().into_parts();
    let (_, denom) = v.denom().clone().into_parts();
    Ratio::new(numer, denom)
}

pub fn to_signed(v: &URational) -> BigRational {
    BigRational::new(
        BigInt::from_biguint(Sign::Plus, v.numer().clone()),
        BigInt::from_biguint(Sign::Plus, v.denom().clone()),
    )
}

pub fn to_f64(v: &BigRational) -> f64 {
    v.to_f64().unwrap_or_else(|| {
        v.numer().to_f64().unwrap_or(f64::NAN) / v.denom().to_f64().unwrap_or(f64::NAN)
    })
}

pub fn unsigned_to_f64(v: &URational) -> f64 {
    v.numer().to_f64().unwrap_or(f64::NAN) / v.denom().to_f64().unwrap_or(f64::NAN)
}

/// Rounds to `places` decimal digits, half away from zero, returning an exact
/// rational with denominator 10^places.
pub fn round_to_places(v: &BigRational, places: u32) -> BigRational {
    let scale = BigInt::from(10u8).pow(places);
    let scaled = v * BigRational::from_integer(scale.clone());
    // round half away from zero: floor(|x| + 1/2) with the sign restored
    let half = BigRational::new(BigInt::one(), BigInt::from(2u8));
    let magnitude = (scaled.abs() + half).floor();
    let rounded = if scaled.is_negative() {
        -magnitude
    } else {
        magnitude
    };
    rounded / BigRational::from_integer(scale)
}

/// Formats exactly as a decimal string when the denominator divides a power
/// of ten (always true for parsed config values), otherwise as `p/q`.
pub fn format_exact(v: &BigRational) -> String {
    let denom = v.denom();
    if denom.is_one() {
        return v.numer().to_string();
    }
    // find k with denom | 10^k by stripping factors of 2 and 5
    let mut rest = denom.magnitude().clone();
    let two = BigUint::from(2u8);
    let five = BigUint::from(5u8);
    let mut twos = 0u32;
    let mut fives = 0u32;
    while (&rest % &two).is_zero() {
        rest /= &two;
        twos += 1;
    }
    while (&rest % &five).is_zero() {
        rest /= &five;
        fives += 1;
    }
    if !rest.is_one() {
        return format!("{}/{}", v.numer(), v.denom());
    }
    let k = twos.max(fives);
    let scaled = (v * BigRational::from_integer(BigInt::from(10u8).pow(k)))
        .to_integer()
        .abs();
    let sign = if v.is_negative() { "-" } else { "" };
    let digits = scaled.to_string();
    if k == 0 {
        return format!("{sign}{digits}");
    }
    let k = k as usize;
    if digits.len() <= k {
        format!("{sign}0.{}{digits}", "0".repeat(k - digits.len()))
    } else {
        let (int_part, frac_part) = digits.split_at(digits.len() - k);
        format!("{sign}{int_part}.{frac_part}")
    }
}

/// Formats rounded to `places` decimals, always showing `places` digits.
pub fn format_rounded(v: &BigRational, places: u32) -> String {
    let r = round_to_places(v, places);
    let scale = BigInt::from(10u8).pow(places);
    let scaled = (&r * BigRational::from_integer(scale)).to_integer();
    let sign = if scaled.is_negative() { "-" } else { "" };
    let digits = scaled.abs().to_string();
    let places = places as usize;
    if places == 0 {
        return format!("{sign}{digits}");
    }
    if digits.len() <= places {
        format!("{sign}0.{}{digits}", "0".repeat(places - digits.len()))
    } else {
        let (int_part, frac_part) = digits.split_at(digits.len() - places);
        format!("{sign}{int_part}.{frac_part}")
    }
}
