//! Exact integer sampling primitives.
//!
//! Everything here operates on unsigned big integers so acceptance
//! probabilities are exact; no floating point enters the sampling path.
//! The construction is the standard rejection chain: Bernoulli(exp(-x))
//! from unit-interval Bernoulli trials, a discrete Laplace from geometric
//! blocks, and a discrete Gaussian by accept/reject against the Laplace
//! envelope. Every loop terminates with probability 1: each restart round
//! has acceptance probability bounded away from zero.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

use crate::rational::URational;

/// Bernoulli(num/den). Requires num <= den, den > 0.
pub fn bernoulli_frac<R: Rng + ?Sized>(num: &BigUint, den: &BigUint, rng: &mut R) -> bool {
    debug_assert!(!den.is_zero() && num <= den);
    rng.gen_biguint_below(den) < *num
}

/// Bernoulli(exp(-num/den)) for num/den in [0, 1].
///
/// Draws Bernoulli(g/k) for k = 1, 2, ... until the first failure at k = K;
/// K is odd with probability exp(-g).
fn bernoulli_exp_unit<R: Rng + ?Sized>(num: &BigUint, den: &BigUint, rng: &mut R) -> bool {
    debug_assert!(num <= den);
    let mut k = BigUint::one();
    loop {
        let kden = den * &k;
        if !bernoulli_frac(num, &kden, rng) {
            return k.is_odd();
        }
        k += 1u8;
    }
}

/// Bernoulli(exp(-num/den)) for any nonnegative num/den.
///
/// Splits exp(-g) = exp(-1)^floor(g) * exp(-(g - floor(g))).
pub fn bernoulli_exp<R: Rng + ?Sized>(num: &BigUint, den: &BigUint, rng: &mut R) -> bool {
    debug_assert!(!den.is_zero());
    let (whole, rem) = num.div_rem(den);
    let mut i = BigUint::zero();
    while i < whole {
        if !bernoulli_exp_unit(den, den, rng) {
            return false;
        }
        i += 1u8;
    }
    bernoulli_exp_unit(&rem, den, rng)
}

/// Discrete Laplace with scale t/s: pmf(x) proportional to exp(-s|x|/t).
pub fn discrete_laplace<R: Rng + ?Sized>(s: &BigUint, t: &BigUint, rng: &mut R) -> BigInt {
    debug_assert!(!s.is_zero() && !t.is_zero());
    loop {
        // magnitude: U + t*V is geometric with rate 1/t, then scaled by s
        let u = rng.gen_biguint_below(t);
        if !bernoulli_exp_unit(&u, t, rng) {
            continue;
        }
        let mut v = BigUint::zero();
        while bernoulli_exp_unit(t, t, rng) {
            v += 1u8;
        }
        let x = u + t * v;
        let y = x / s;
        let negative = rng.gen::<bool>();
        // zero appears on one sign only, otherwise it would be double-counted
        if negative && y.is_zero() {
            continue;
        }
        let y = BigInt::from(y);
        return if negative { -y } else { y };
    }
}

/// Integer floor of sqrt(sigma_squared).
///
/// floor(sqrt(p/q)) = floor(sqrt(floor(p/q))): if the right side were k with
/// sqrt(p/q) >= k+1, then p/q >= (k+1)^2, an integer, so floor(p/q) >= (k+1)^2.
pub fn floor_sigma(sigma_squared: &URational) -> BigUint {
    (sigma_squared.numer() / sigma_squared.denom()).sqrt()
}

/// Exact discrete Gaussian sample, pmf(x) proportional to exp(-x^2 / (2 sigma^2)).
///
/// Proposes from a discrete Laplace with scale t = floor(sigma) + 1 and
/// accepts with probability exp(-(|y| - sigma^2/t)^2 / (2 sigma^2)), computed
/// exactly: with sigma^2 = p/q the exponent is d^2 / (2 p q t^2) where
/// d = | |y| q t - p |.
pub fn discrete_gaussian<R: Rng + ?Sized>(sigma_squared: &URational, rng: &mut R) -> BigInt {
    let p = sigma_squared.numer();
    let q = sigma_squared.denom();
    debug_assert!(!p.is_zero());
    let t = floor_sigma(sigma_squared) + 1u8;
    let one = BigUint::one();
    let accept_den = BigUint::from(2u8) * p * q * &t * &t;
    loop {
        let y = discrete_laplace(&one, &t, rng);
        let d = {
            let scaled = y.magnitude() * q * &t;
            if scaled >= *p {
                &scaled - p
            } else {
                p - &scaled
            }
        };
        if bernoulli_exp(&(&d * &d), &accept_den, rng) {
            return y;
        }
    }
}
