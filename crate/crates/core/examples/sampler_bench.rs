//! Rough sampler throughput check.

use num_bigint::BigUint;
use num_rational::Ratio;
use safetab_core::noise::{DiscreteGaussian, RandomSource};
use std::time::Instant;

fn main() {
    for (num, den) in [(1u64, 1u64), (4, 1), (3147, 100), (1562500, 2401)] {
        let d = DiscreteGaussian::new(Ratio::new(BigUint::from(num), BigUint::from(den))).unwrap();
        let mut rng = RandomSource::new(42, 0);
        let n = 1_000_000;
        let start = Instant::now();
        let mut acc = 0i64;
        for _ in 0..n {
            acc = acc.wrapping_add(d.sample(&mut rng));
        }
        let dt = start.elapsed();
        println!(
            "sigma^2 = {num}/{den}: {n} samples in {:.2?} ({:.2} us/sample, checksum {acc})",
            dt,
            dt.as_secs_f64() * 1e6 / n as f64
        );
    }
}
