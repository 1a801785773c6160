//! Parameter planning: MOE <-> budget conversion and report generation.
//!
//! The planner answers the curator's sizing questions before any data is
//! touched: what budget buys a target margin of error, what suppression
//! threshold a budget implies, and how suppression probability and release
//! bias vary with true group size. All budget arithmetic is exact; floats
//! appear only in displayed sigmas, probabilities, and curve values.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::data::{GeoLevel, IterationLevel};
use crate::engine::Mechanism;
use crate::noise::NoiseError;
use crate::postprocess::{
    derive_threshold, release_bias, release_bias_continuous, stage2_gaussian,
    suppression_probability, PostprocessError,
};
use crate::rational::{format_exact, parse_decimal, round_to_places};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("MOE target must be at least 1")]
    MoeOutOfRange,
    #[error("race multiplicity cap must lie in 1..=8, got {0}")]
    RaceCapOutOfRange(u32),
    #[error("budget must be positive, got {0}")]
    NonpositiveBudget(String),
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    GammaOutOfRange(String),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Which slice of a level budget the noise scale refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoeStep {
    /// A total-only count: the whole per-group budget buys one cell.
    FullBudget,
    /// The stage-1 selection total at fraction gamma of the group budget.
    Selection,
    /// The stage-2 published cells at the remaining 1 - gamma.
    Adaptive,
}

/// Noise variance on one published count at a level: sigma^2 = s / (2 f
/// rho) where f is the step's share of the per-group budget rho / s.
pub fn noise_sigma_squared(
    rho_level: &BigRational,
    gamma: &BigRational,
    stability: u32,
    step: MoeStep,
) -> Result<BigRational, PlannerError> {
    if !rho_level.is_positive() {
        return Err(PlannerError::NonpositiveBudget(format_exact(rho_level)));
    }
    if gamma <= &BigRational::zero() || gamma >= &BigRational::one() {
        return Err(PlannerError::GammaOutOfRange(format_exact(gamma)));
    }
    let share = match step {
        MoeStep::FullBudget => BigRational::one(),
        MoeStep::Selection => gamma.clone(),
        MoeStep::Adaptive => BigRational::one() - gamma,
    };
    let s = BigRational::from_integer(stability.into());
    Ok(s / (BigRational::from_integer(2.into()) * share * rho_level))
}

// 1.96 = 49/25, so floor(1.96 sigma) = floor(sqrt(2401 sigma^2 / 625)),
// and since floor(sqrt(floor(x))) = floor(sqrt(x)) for rational x >= 0 the
// whole computation stays in integers.
fn floor_196_sigma(sigma_squared: &BigRational) -> u64 {
    let n = sigma_squared.numer().to_biguint().expect("positive variance");
    let d = sigma_squared.denom().to_biguint().expect("positive denominator");
    let q = (BigUint::from(2401u32) * n) / (BigUint::from(625u32) * d);
    q.sqrt().to_u64().expect("MOE fits in u64")
}

/// The 95% margin of error (floor of 1.96 sigma) of one published count at
/// a level, computed exactly.
pub fn moe_for_level(
    rho_level: &BigRational,
    gamma: &BigRational,
    stability: u32,
    step: MoeStep,
) -> Result<u64, PlannerError> {
    Ok(floor_196_sigma(&noise_sigma_squared(
        rho_level, gamma, stability, step,
    )?))
}

/// Exact budgets hitting an MOE target: 1.96 sigma equals the target with
/// no slack, before any display rounding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoeBudget {
    /// Stage-2 budget for a single group: (1.96^2 / 2) / moe^2.
    pub per_group_step2: BigRational,
    /// Stage-2 budget for the whole level: stability times the per-group.
    pub level_step2: BigRational,
    /// Full level budget: step-2 is the 1 - gamma share of it.
    pub level_total: BigRational,
}

/// Budgets required for a stage-2 MOE of exactly `moe`: per-group rho =
/// (1.96^2 / 2) / moe^2 makes 1.96 sigma = moe an identity, so the floor
/// is tight.
pub fn rho_for_moe(
    moe: u64,
    gamma: &BigRational,
    stability: u32,
) -> Result<MoeBudget, PlannerError> {
    if moe == 0 {
        return Err(PlannerError::MoeOutOfRange);
    }
    if gamma <= &BigRational::zero() || gamma >= &BigRational::one() {
        return Err(PlannerError::GammaOutOfRange(format_exact(gamma)));
    }
    // 1.96^2 / 2 = 2401/1250
    let half_z_squared = BigRational::new(2401.into(), 1250.into());
    let m = BigRational::from_integer(moe.into());
    let per_group_step2 = half_z_squared / (&m * &m);
    let level_step2 = &per_group_step2 * BigRational::from_integer(stability.into());
    let level_total = &level_step2 / (BigRational::one() - gamma);
    Ok(MoeBudget {
        per_group_step2,
        level_step2,
        level_total,
    })
}

/// One level's row in the planner input: where it sits and the stage-2 MOE
/// it should achieve.
#[derive(Debug, Clone)]
pub struct PlannerLevel {
    pub level_id: String,
    pub geo_level: GeoLevel,
    pub iteration_level: IterationLevel,
    pub moe: u64,
}

#[derive(Debug, Clone)]
pub struct PlannerInput {
    pub levels: Vec<PlannerLevel>,
    pub gamma: BigRational,
    pub race_cap: u32,
    pub zero_suppression_probability: f64,
    /// Budgets beyond the level list to include in the threshold table.
    pub extra_threshold_rhos: Vec<BigRational>,
    /// Level budget the bias / suppression curves are drawn at; defaults to
    /// the production sub-state detailed budget 0.159.
    pub curve_rho: Option<BigRational>,
}

impl PlannerInput {
    /// The production parameterization of the 2020 detailed race and
    /// ethnicity release: MOE targets 3 (nation/state detailed), 11
    /// (sub-state detailed), and 50 (regional); gamma 1/10; race cap 8;
    /// zero-suppression target 0.9999.
    pub fn production() -> Self {
        let level = |id: &str, geo, iter, moe| PlannerLevel {
            level_id: id.to_string(),
            geo_level: geo,
            iteration_level: iter,
            moe,
        };
        use GeoLevel::*;
        use IterationLevel::*;
        PlannerInput {
            levels: vec![
                level("nation_detailed", Nation, Detailed, 3),
                level("state_detailed", State, Detailed, 3),
                level("county_detailed", County, Detailed, 11),
                level("tract_detailed", Tract, Detailed, 11),
                level("place_detailed", Place, Detailed, 11),
                level("aiannh_detailed", Aiannh, Detailed, 11),
                level("nation_regional", Nation, Regional, 50),
                level("state_regional", State, Regional, 50),
                level("county_regional", County, Regional, 50),
                level("tract_regional", Tract, Regional, 50),
                level("place_regional", Place, Regional, 50),
            ],
            gamma: parse_decimal("0.1").expect("literal"),
            race_cap: 8,
            zero_suppression_probability: 0.9999,
            extra_threshold_rhos: vec![parse_decimal("0.543").expect("literal")],
            curve_rho: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LevelRow {
    pub level_id: String,
    pub geo_level: GeoLevel,
    pub iteration_level: IterationLevel,
    pub moe: u64,
    /// Stage-2 per-count noise sigma under the published (rounded) budget.
    pub sigma: f64,
    pub step2_rho: BigRational,
    pub total_rho: BigRational,
    pub bounded_step2_rho: BigRational,
    pub bounded_total_rho: BigRational,
    pub threshold: i64,
}

#[derive(Debug, Clone)]
pub struct ThresholdRow {
    pub rho: BigRational,
    pub threshold: i64,
}

#[derive(Debug, Clone, Copy)]
pub struct SuppressionPoint {
    pub ratio: f64,
    pub true_count: i64,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BiasPoint {
    pub ratio: f64,
    pub true_count: i64,
    pub bias: f64,
    pub continuous: f64,
}

#[derive(Debug, Clone)]
pub struct PlannerReport {
    pub levels: Vec<LevelRow>,
    pub thresholds: Vec<ThresholdRow>,
    pub suppression_curve: Vec<SuppressionPoint>,
    pub bias_curve: Vec<BiasPoint>,
    pub curve_rho: BigRational,
    pub curve_threshold: i64,
}

/// Published budgets are the exact MOE-derived values rounded to three
/// decimals (half away from zero); the stage-2 share is then recomputed
/// from the rounded total so the split identity stays exact. A rounded
/// budget of zero (possible only for extreme MOE targets) falls back to
/// the exact value.
fn canonical_total(exact_total: &BigRational) -> BigRational {
    let rounded = round_to_places(exact_total, 3);
    if rounded.is_positive() {
        rounded
    } else {
        exact_total.clone()
    }
}

pub fn emit_planner_report(input: &PlannerInput) -> Result<PlannerReport, PlannerError> {
    if !(1..=8).contains(&input.race_cap) {
        return Err(PlannerError::RaceCapOutOfRange(input.race_cap));
    }
    let stability = crate::accountant::stability_for_race_cap(input.race_cap);
    let p = input.zero_suppression_probability;
    let gamma = &input.gamma;
    let two = BigRational::from_integer(2.into());

    let mut levels = Vec::new();
    for level in &input.levels {
        let budget = rho_for_moe(level.moe, gamma, stability)?;
        let total_rho = canonical_total(&budget.level_total);
        let step2_rho = &total_rho * (BigRational::one() - gamma);
        let dist = stage2_gaussian(&total_rho, gamma, stability)?;
        let threshold = derive_threshold(&total_rho, gamma, stability, p, Mechanism::DiscreteGaussian)?;
        levels.push(LevelRow {
            level_id: level.level_id.clone(),
            geo_level: level.geo_level,
            iteration_level: level.iteration_level,
            moe: level.moe,
            sigma: dist.sigma(),
            bounded_step2_rho: &step2_rho * &two,
            bounded_total_rho: &total_rho * &two,
            step2_rho,
            total_rho,
            threshold,
        });
    }

    let mut threshold_rhos: Vec<BigRational> = levels
        .iter()
        .map(|r| r.total_rho.clone())
        .chain(input.extra_threshold_rhos.iter().cloned())
        .collect();
    threshold_rhos.sort();
    threshold_rhos.dedup();
    let thresholds = threshold_rhos
        .into_iter()
        .map(|rho| {
            let threshold =
                derive_threshold(&rho, gamma, stability, p, Mechanism::DiscreteGaussian)?;
            Ok(ThresholdRow { rho, threshold })
        })
        .collect::<Result<Vec<_>, PlannerError>>()?;

    let curve_rho = input
        .curve_rho
        .clone()
        .unwrap_or_else(|| parse_decimal("0.159").expect("literal"));
    let curve_threshold =
        derive_threshold(&curve_rho, gamma, stability, p, Mechanism::DiscreteGaussian)?;
    let dist = stage2_gaussian(&curve_rho, gamma, stability)?;
    let mut suppression_curve = Vec::new();
    let mut bias_curve = Vec::new();
    // true counts swept as a fraction of the threshold, 0 to 2 in steps of
    // 0.05 (41 points)
    for i in 0..=40u32 {
        let ratio = f64::from(i) * 0.05;
        let true_count = (ratio * curve_threshold as f64).round() as i64;
        suppression_curve.push(SuppressionPoint {
            ratio,
            true_count,
            probability: suppression_probability(true_count, &dist, curve_threshold),
        });
        bias_curve.push(BiasPoint {
            ratio,
            true_count,
            bias: release_bias(true_count, &dist, curve_threshold),
            continuous: release_bias_continuous(true_count, dist.sigma(), curve_threshold),
        });
    }

    Ok(PlannerReport {
        levels,
        thresholds,
        suppression_curve,
        bias_curve,
        curve_rho,
        curve_threshold,
    })
}

impl PlannerReport {
    pub fn levels_csv(&self) -> String {
        let mut out = String::from(
            "level_id,geo_level,iteration_level,moe,sigma,step2_rho,total_rho,bounded_step2_rho,bounded_total_rho,threshold\n",
        );
        for r in &self.levels {
            out.push_str(&format!(
                "{},{},{},{},{:.4},{},{},{},{},{}\n",
                r.level_id,
                r.geo_level.as_str(),
                r.iteration_level.as_str(),
                r.moe,
                r.sigma,
                format_exact(&r.step2_rho),
                format_exact(&r.total_rho),
                format_exact(&r.bounded_step2_rho),
                format_exact(&r.bounded_total_rho),
                r.threshold,
            ));
        }
        out
    }

    pub fn thresholds_csv(&self) -> String {
        let mut out = String::from("rho,threshold\n");
        for r in &self.thresholds {
            out.push_str(&format!("{},{}\n", format_exact(&r.rho), r.threshold));
        }
        out
    }

    pub fn suppression_curve_csv(&self) -> String {
        let mut out = String::from("ratio,true_count,suppression_probability\n");
        for p in &self.suppression_curve {
            out.push_str(&format!(
                "{:.2},{},{:.6}\n",
                p.ratio, p.true_count, p.probability
            ));
        }
        out
    }

    pub fn bias_curve_csv(&self) -> String {
        let mut out = String::from("ratio,true_count,release_bias,continuous_approximation\n");
        for p in &self.bias_curve {
            out.push_str(&format!(
                "{:.2},{},{:.4},{:.4}\n",
                p.ratio, p.true_count, p.bias, p.continuous
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    fn dec(s: &str) -> BigRational {
        parse_decimal(s).unwrap()
    }

    #[test]
    fn round_trip_is_exact_at_the_design_budgets() {
        let gamma = dec("0.1");
        for moe in [3u64, 11, 50] {
            let budget = rho_for_moe(moe, &gamma, 9).unwrap();
            // at the exact budget, 1.96 sigma = moe identically:
            // per-group step-2 rho = (2401/1250)/m^2 gives sigma = 25 m / 49
            let sigma2 = noise_sigma_squared(&budget.level_total, &gamma, 9, MoeStep::Adaptive)
                .unwrap();
            let m = BigRational::from_integer(moe.into());
            assert_eq!(
                sigma2,
                &m * &m * BigRational::new(625.into(), 2401.into())
            );
            assert_eq!(
                moe_for_level(&budget.level_total, &gamma, 9, MoeStep::Adaptive).unwrap(),
                moe
            );
        }
    }

    #[test]
    fn budgets_match_the_published_three_decimal_values() {
        let gamma = dec("0.1");
        for (moe, want_total, want_step2_printed) in
            [(3u64, "2.134", "1.921"), (11, "0.159", "0.143"), (50, "0.008", "0.007")]
        {
            let budget = rho_for_moe(moe, &gamma, 9).unwrap();
            let total = canonical_total(&budget.level_total);
            assert_eq!(total, dec(want_total), "moe {moe}");
            // the recomputed stage-2 share sits within half a unit in the
            // third decimal of its printed value
            let step2 = &total * (BigRational::one() - &gamma);
            let diff = (&step2 - dec(want_step2_printed)).abs();
            assert!(diff <= dec("0.001"), "moe {moe}: step2 {}", format_exact(&step2));
        }
    }

    #[test]
    fn floors_are_faithful_at_the_published_budgets() {
        let gamma = dec("0.1");
        // The published budgets are rounded to three decimals; where the
        // rounding shaved the budget down (0.159, 0.008), the floored
        // half-width lands one below the design target.
        for (rho, want) in [("2.134", 3u64), ("0.159", 10), ("0.008", 49)] {
            assert_eq!(
                moe_for_level(&dec(rho), &gamma, 9, MoeStep::Adaptive).unwrap(),
                want,
                "rho {rho}"
            );
        }
    }

    #[test]
    fn the_coarser_z_constant_is_conservative() {
        // using 1.92 instead of 1.96^2/2 = 1.9208 yields a smaller budget
        // that still achieves the same integer MOE
        let gamma = dec("0.1");
        for moe in [3u64, 11, 50] {
            let exact = rho_for_moe(moe, &gamma, 9).unwrap();
            let m = BigRational::from_integer(moe.into());
            let coarse_per_group = dec("1.92") / (&m * &m);
            let coarse_total = &coarse_per_group * BigRational::from_integer(9.into())
                / (BigRational::one() - &gamma);
            assert!(coarse_total < exact.level_total);
            assert_eq!(
                moe_for_level(&coarse_total, &gamma, 9, MoeStep::Adaptive).unwrap(),
                moe
            );
        }
    }

    #[test]
    fn stability_reduction_shrinks_sigma_by_the_exact_ratio() {
        // dropping the race cap from 8 to 3 drops stability from 9 to 4,
        // scaling the noise variance by exactly 4/9
        let gamma = dec("0.1");
        let rho = dec("0.159");
        let s9 = noise_sigma_squared(&rho, &gamma, 9, MoeStep::Adaptive).unwrap();
        let s4 = noise_sigma_squared(&rho, &gamma, 4, MoeStep::Adaptive).unwrap();
        assert_eq!(&s4 / &s9, BigRational::new(4.into(), 9.into()));
        let moe9 = moe_for_level(&rho, &gamma, 9, MoeStep::Adaptive).unwrap();
        let moe4 = moe_for_level(&rho, &gamma, 4, MoeStep::Adaptive).unwrap();
        assert!(moe4 < moe9);
    }

    #[test]
    fn budget_steps_order_the_noise_scales() {
        let gamma = dec("0.1");
        let rho = dec("0.159");
        let full = noise_sigma_squared(&rho, &gamma, 9, MoeStep::FullBudget).unwrap();
        let selection = noise_sigma_squared(&rho, &gamma, 9, MoeStep::Selection).unwrap();
        let adaptive = noise_sigma_squared(&rho, &gamma, 9, MoeStep::Adaptive).unwrap();
        // the full budget is quietest, the 10% selection slice loudest
        assert!(full < adaptive);
        assert!(adaptive < selection);
        assert_eq!(&selection / &full, BigRational::new(10.into(), 1.into()));
    }

    #[test]
    fn moe_is_monotone_nonincreasing_in_rho() {
        let gamma = dec("0.1");
        let mut last = u64::MAX;
        for i in 1..=400u32 {
            let rho = BigRational::new(i.into(), 100.into());
            let moe = moe_for_level(&rho, &gamma, 9, MoeStep::Adaptive).unwrap();
            assert!(moe <= last, "moe increased at rho = {i}/100");
            last = moe;
        }
    }

    #[test]
    fn rho_is_monotone_decreasing_in_moe() {
        let gamma = dec("0.1");
        let mut last: Option<MoeBudget> = None;
        for moe in 1..=100 {
            let b = rho_for_moe(moe, &gamma, 9).unwrap();
            if let Some(prev) = &last {
                assert!(b.level_total < prev.level_total);
            }
            last = Some(b);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let gamma = dec("0.1");
        assert!(matches!(
            rho_for_moe(0, &gamma, 9),
            Err(PlannerError::MoeOutOfRange)
        ));
        assert!(matches!(
            rho_for_moe(3, &dec("1"), 9),
            Err(PlannerError::GammaOutOfRange(_))
        ));
        assert!(matches!(
            moe_for_level(&dec("0"), &gamma, 9, MoeStep::Adaptive),
            Err(PlannerError::NonpositiveBudget(_))
        ));
        let mut input = PlannerInput::production();
        input.race_cap = 9;
        assert!(matches!(
            emit_planner_report(&input),
            Err(PlannerError::RaceCapOutOfRange(9))
        ));
    }

    #[test]
    fn production_report_reproduces_the_budget_table() {
        let report = emit_planner_report(&PlannerInput::production()).unwrap();
        assert_eq!(report.levels.len(), 11);
        let total: BigRational = report
            .levels
            .iter()
            .map(|r| r.total_rho.clone())
            .sum();
        assert_eq!(total, dec("4.944"));
        let bounded: BigRational = report
            .levels
            .iter()
            .map(|r| r.bounded_total_rho.clone())
            .sum();
        assert_eq!(bounded, dec("9.888"));
        for r in &report.levels {
            assert_eq!(r.bounded_total_rho, &r.total_rho * BigRational::from_integer(2.into()));
            assert_eq!(r.bounded_step2_rho, &r.step2_rho * BigRational::from_integer(2.into()));
            // the split identity holds exactly on the published budgets
            assert_eq!(r.step2_rho, &r.total_rho * dec("0.9"));
        }
    }

    #[test]
    fn production_report_reproduces_the_threshold_table() {
        let report = emit_planner_report(&PlannerInput::production()).unwrap();
        let find = |rho: &str| {
            report
                .thresholds
                .iter()
                .find(|r| r.rho == dec(rho))
                .unwrap_or_else(|| panic!("no threshold row for {rho}"))
                .threshold
        };
        assert!((find("0.008") - 93).abs() <= 1);
        assert!((find("0.159") - 21).abs() <= 1);
        assert!((find("0.543") - 11).abs() <= 1);
    }

    #[test]
    fn curves_cover_the_declared_grid() {
        let report = emit_planner_report(&PlannerInput::production()).unwrap();
        assert_eq!(report.curve_rho, dec("0.159"));
        assert_eq!(report.suppression_curve.len(), 41);
        assert_eq!(report.bias_curve.len(), 41);
        assert_eq!(report.suppression_curve[0].ratio, 0.0);
        assert_eq!(report.suppression_curve[40].ratio, 2.0);
        assert_eq!(
            report.suppression_curve[40].true_count,
            2 * report.curve_threshold
        );
        // suppression probability decays with true size; release bias too
        for w in report.suppression_curve.windows(2) {
            assert!(w[1].probability <= w[0].probability + 1e-12);
        }
        for w in report.bias_curve.windows(2) {
            assert!(w[1].bias <= w[0].bias + 1e-9);
        }
        // at the threshold itself the discrete and continuous forms agree
        // to the half-integer correction
        let at_threshold = report
            .bias_curve
            .iter()
            .find(|p| p.true_count == report.curve_threshold)
            .unwrap();
        assert!((at_threshold.bias - at_threshold.continuous).abs() < 0.1 * at_threshold.continuous);
    }

    #[test]
    fn csv_rendering_is_exact_for_budgets() {
        let report = emit_planner_report(&PlannerInput::production()).unwrap();
        let levels = report.levels_csv();
        assert!(levels.starts_with("level_id,geo_level"));
        assert!(levels.contains(",2.134,"), "{levels}");
        assert!(levels.contains(",1.9206,"));
        assert!(levels.contains(",0.159,"));
        assert!(levels.contains(",0.008,"));
        assert_eq!(levels.lines().count(), 12);
        let thresholds = report.thresholds_csv();
        assert_eq!(thresholds.lines().count(), 1 + report.thresholds.len());
        assert!(report.suppression_curve_csv().lines().count() == 42);
        assert!(report.bias_curve_csv().lines().count() == 42);
    }

    #[test]
    fn sigma_column_reflects_the_published_budgets() {
        let report = emit_planner_report(&PlannerInput::production()).unwrap();
        let by_id = |id: &str| {
            report
                .levels
                .iter()
                .find(|r| r.level_id == id)
                .unwrap()
                .sigma
        };
        // sigma^2 = 9 / (2 * 0.9 * rho) at the rounded budgets
        assert!((by_id("nation_detailed") - 1.5307).abs() < 1e-3);
        assert!((by_id("county_detailed") - 5.6077).abs() < 1e-3);
        assert!((by_id("nation_regional") - 25.0).abs() < 1e-9);
        let sum: f64 = report.levels.iter().map(|r| r.moe.to_f64().unwrap()).sum();
        assert_eq!(sum, 2.0 * 3.0 + 4.0 * 11.0 + 5.0 * 50.0);
    }
}
