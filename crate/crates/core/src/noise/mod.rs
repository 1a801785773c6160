//! Integer-valued noise distributions.
//!
//! Two mechanisms: the discrete Gaussian (concentrated-DP accounting) and the
//! two-sided geometric (pure-DP accounting). Sampling is exact over big
//! integers (`exact` submodule); pmf/cdf/moment queries are floating point
//! with truncation chosen so residual mass is far below the 1e-10 accuracy
//! contract of `cdf`.

pub mod exact;

use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::rational::{to_unsigned, unsigned_to_f64, URational};

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("variance must be positive")]
    NonpositiveVariance,
    #[error("scale must be positive")]
    NonpositiveScale,
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("tail bound requires m >= 1, got {0}")]
    TailBoundDomain(i64),
}

/// Deterministic RNG: one independent ChaCha20 stream per (seed, stream_id).
///
/// Parallel tabulation hands each task its own stream so noise draws are
/// independent and the run is reproducible regardless of scheduling. The
/// generator is deterministic by design; a production deployment would seed
/// from hardware entropy instead of a fixed 64-bit value.
pub struct RandomSource {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomSource {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Discrete Gaussian over the integers: pmf(x) proportional to
/// exp(-x^2 / (2 sigma^2)), sigma^2 held as an exact rational.
#[derive(Debug)]
pub struct DiscreteGaussian {
    sigma_squared: URational,
    normalizer: OnceLock<f64>,
}

impl Clone for DiscreteGaussian {
    fn clone(&self) -> Self {
        DiscreteGaussian {
            sigma_squared: self.sigma_squared.clone(),
            normalizer: OnceLock::new(),
        }
    }
}

impl DiscreteGaussian {
    pub fn new(sigma_squared: URational) -> Result<Self, NoiseError> {
        if sigma_squared.numer().is_zero() {
            return Err(NoiseError::NonpositiveVariance);
        }
        Ok(DiscreteGaussian {
            sigma_squared,
            normalizer: OnceLock::new(),
        })
    }

    /// Calibrates for a sensitivity-1 count at budget rho: sigma^2 = 1/(2 rho).
    pub fn from_rho(rho: &BigRational) -> Result<Self, NoiseError> {
        if !rho.is_positive() {
            return Err(NoiseError::NonpositiveVariance);
        }
        let two_rho = to_unsigned(&(rho * BigRational::from_integer(2.into())));
        DiscreteGaussian::new(two_rho.recip())
    }

    pub fn sigma_squared(&self) -> &URational {
        &self.sigma_squared
    }

    pub fn sigma(&self) -> f64 {
        unsigned_to_f64(&self.sigma_squared).sqrt()
    }

    /// Truncation radius: residual mass beyond max(12 sigma, 50) is below
    /// exp(-72), negligible against the 1e-10 cdf accuracy target. Callers
    /// summing over the support can stop at this radius.
    pub fn window(&self) -> i64 {
        ((12.0 * self.sigma()).ceil() as i64).max(50)
    }

    fn weight(&self, x: i64) -> f64 {
        let s2 = unsigned_to_f64(&self.sigma_squared);
        let x = x as f64;
        (-(x * x) / (2.0 * s2)).exp()
    }

    fn normalizer(&self) -> f64 {
        *self.normalizer.get_or_init(|| {
            // tail-first summation keeps the small terms from being absorbed
            let mut acc = 0.0;
            for x in (1..=self.window()).rev() {
                acc += 2.0 * self.weight(x);
            }
            acc + 1.0
        })
    }

    pub fn pmf(&self, x: i64) -> f64 {
        if x.unsigned_abs() > self.window() as u64 {
            return 0.0;
        }
        self.weight(x) / self.normalizer()
    }

    /// P[X <= t] by symmetric truncated summation; absolute error <= 1e-10.
    pub fn cdf(&self, t: i64) -> f64 {
        let w = self.window();
        if t >= w {
            return 1.0;
        }
        if t < -w {
            return 0.0;
        }
        if t >= 0 {
            // P[X <= t] = 1 - P[X <= -(t+1)] by symmetry
            return 1.0 - self.cdf(-(t + 1));
        }
        let mut acc = 0.0;
        for x in (t.unsigned_abs() as i64..=w).rev() {
            acc += self.weight(x);
        }
        acc / self.normalizer()
    }

    /// Smallest integer t with cdf(t) >= p.
    pub fn inverse_cdf(&self, p: f64) -> Result<i64, NoiseError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(NoiseError::ProbabilityOutOfRange(p));
        }
        let w = self.window();
        let mut lo = -w - 1; // cdf(lo) = 0 < p
        let mut hi = w; // cdf(hi) = 1 >= p
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Continuous-Gaussian upper bound on P[X >= m - 1]; dominates the exact
    /// discrete tail for every m >= 1.
    pub fn tail_bound(&self, m: i64) -> Result<f64, NoiseError> {
        if m < 1 {
            return Err(NoiseError::TailBoundDomain(m));
        }
        let z = (m - 1) as f64 / (self.sigma() * std::f64::consts::SQRT_2);
        Ok(0.5 * statrs::function::erf::erfc(z))
    }

    /// Variance by pmf summation over the truncation window.
    pub fn variance(&self) -> f64 {
        let mut acc = 0.0;
        for x in (1..=self.window()).rev() {
            let x_f = x as f64;
            acc += 2.0 * x_f * x_f * self.weight(x);
        }
        acc / self.normalizer()
    }

    /// Exact sample; integer arithmetic only.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let v: BigInt = exact::discrete_gaussian(&self.sigma_squared, rng);
        i64::try_from(&v).expect("discrete Gaussian sample exceeds i64")
    }
}

/// Two-sided geometric: pmf(x) = (1-a)/(1+a) * a^|x| with a = exp(-epsilon).
#[derive(Debug, Clone)]
pub struct TwoSidedGeometric {
    epsilon: URational,
}

impl TwoSidedGeometric {
    pub fn new(epsilon: URational) -> Result<Self, NoiseError> {
        if epsilon.numer().is_zero() {
            return Err(NoiseError::NonpositiveScale);
        }
        Ok(TwoSidedGeometric { epsilon })
    }

    /// Calibrates for a sensitivity-1 count at pure-DP budget epsilon.
    pub fn from_epsilon(epsilon: &BigRational) -> Result<Self, NoiseError> {
        if !epsilon.is_positive() {
            return Err(NoiseError::NonpositiveScale);
        }
        TwoSidedGeometric::new(to_unsigned(epsilon))
    }

    pub fn epsilon(&self) -> &URational {
        &self.epsilon
    }

    fn eps_f64(&self) -> f64 {
        unsigned_to_f64(&self.epsilon)
    }

    fn alpha(&self) -> f64 {
        (-self.eps_f64()).exp()
    }

    pub fn pmf(&self, x: i64) -> f64 {
        let a = self.alpha();
        (1.0 - a) / (1.0 + a) * (-self.eps_f64() * x.unsigned_abs() as f64).exp()
    }

    /// Closed-form cdf: geometric series on each side of zero.
    pub fn cdf(&self, t: i64) -> f64 {
        let a = self.alpha();
        let eps = self.eps_f64();
        if t <= 0 {
            (eps * t as f64).exp() / (1.0 + a)
        } else {
            1.0 - (-eps * (t + 1) as f64).exp() / (1.0 + a)
        }
    }

    /// Smallest integer t with cdf(t) >= p.
    pub fn inverse_cdf(&self, p: f64) -> Result<i64, NoiseError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(NoiseError::ProbabilityOutOfRange(p));
        }
        // residual beyond the window is under exp(-46), below any p in (0,1)
        // representable at f64 precision against the closed-form cdf
        let w = (46.0 / self.eps_f64()).ceil() as i64 + 1;
        let mut lo = -w - 1;
        let mut hi = w;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    pub fn variance(&self) -> f64 {
        let a = self.alpha();
        2.0 * a / ((1.0 - a) * (1.0 - a))
    }

    /// Exact sample via the discrete Laplace with scale den/num.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let v: BigInt = exact::discrete_laplace(self.epsilon.numer(), self.epsilon.denom(), rng);
        i64::try_from(&v).expect("two-sided geometric sample exceeds i64")
    }
}
