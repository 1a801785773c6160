//! Budget-free postprocessing of noisy tables.
//!
//! Everything here consumes only `NoisyTable`s and public configuration —
//! never person records — so no step costs privacy budget. Three passes:
//! internally consistent marginals for sex-by-age tables, small-count
//! suppression with thresholds derived from the stage-2 noise scale, and
//! reconciliation of coterminous geographic entities by donor overwrite.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::{One, Zero};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::data::{CoterminousSpec, GeoLevel, KeySet, LevelSpec, PopulationGroup};
use crate::engine::{Mechanism, NoisyTable, Tier, TOTAL_CELL};
use crate::noise::{DiscreteGaussian, NoiseError, TwoSidedGeometric};
use crate::rational::format_exact;

pub const MALE_MARGINAL: &str = "male:all";
pub const FEMALE_MARGINAL: &str = "female:all";

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("marginals apply to sex-by-age tables, got the {0:?} tier")]
    NotSexByAge(Tier),
    #[error("probability must lie strictly between 0 and 1, got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    GammaOutOfRange(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Adds the sex marginals and grand total to a sex-by-age table, each the
/// exact sum of that table's own noised cells, and marks them as derived.
/// Recomputing is safe: marginals always sum the noised cells only.
pub fn attach_marginals(table: &mut NoisyTable) -> Result<(), PostprocessError> {
    let Some(binning) = table.tier.binning() else {
        return Err(PostprocessError::NotSexByAge(table.tier));
    };
    let sum_for = |table: &NoisyTable, sex: &str| -> i64 {
        binning
            .bin_labels()
            .iter()
            .map(|label| {
                table
                    .cells
                    .get(&format!("{sex}:{label}"))
                    .copied()
                    .unwrap_or(0)
            })
            .sum()
    };
    let male = sum_for(table, "male");
    let female = sum_for(table, "female");
    table.cells.insert(MALE_MARGINAL.to_string(), male);
    table.cells.insert(FEMALE_MARGINAL.to_string(), female);
    table.cells.insert(TOTAL_CELL.to_string(), male + female);
    table.derived.extend([
        MALE_MARGINAL.to_string(),
        FEMALE_MARGINAL.to_string(),
        TOTAL_CELL.to_string(),
    ]);
    Ok(())
}

/// The noise distribution on one group's stage-2 total at a level:
/// per-group budget is `rho / stability` and stage 2 keeps `1 - gamma` of
/// it, so sigma^2 = stability / (2 (1 - gamma) rho).
pub fn stage2_gaussian(
    level_rho: &BigRational,
    gamma: &BigRational,
    stability: u32,
) -> Result<DiscreteGaussian, PostprocessError> {
    let rho_stage2 = stage2_per_group(level_rho, gamma, stability)?;
    Ok(DiscreteGaussian::from_rho(&rho_stage2)?)
}

fn stage2_per_group(
    level_rho: &BigRational,
    gamma: &BigRational,
    stability: u32,
) -> Result<BigRational, PostprocessError> {
    if gamma <= &BigRational::zero() || gamma >= &BigRational::one() {
        return Err(PostprocessError::GammaOutOfRange(format_exact(gamma)));
    }
    let remainder = BigRational::one() - gamma;
    Ok(level_rho * remainder / BigRational::from_integer(stability.into()))
}

/// The suppression threshold for a level: the smallest integer T such that
/// a true-zero group's noisy total falls below T with probability at least
/// `p`. Equivalently T is the p-quantile of the stage-2 noise.
pub fn derive_threshold(
    level_rho: &BigRational,
    gamma: &BigRational,
    stability: u32,
    p: f64,
    mechanism: Mechanism,
) -> Result<i64, PostprocessError> {
    if !(0.0 < p && p < 1.0) {
        return Err(PostprocessError::ProbabilityOutOfRange(p));
    }
    match mechanism {
        Mechanism::DiscreteGaussian => {
            let dist = stage2_gaussian(level_rho, gamma, stability)?;
            Ok(dist.inverse_cdf(p)?)
        }
        Mechanism::TwoSidedGeometric => {
            let epsilon = stage2_per_group(level_rho, gamma, stability)?;
            let dist = TwoSidedGeometric::from_epsilon(&epsilon)?;
            Ok(dist.inverse_cdf(p)?)
        }
    }
}

/// Suppression parameters: the target probability that a true-zero group is
/// suppressed, plus optional per-level threshold overrides.
#[derive(Debug, Clone)]
pub struct SuppressionPolicy {
    probability: f64,
    overrides: BTreeMap<String, i64>,
}

impl SuppressionPolicy {
    pub fn new(probability: f64) -> Result<Self, PostprocessError> {
        if !(0.0 < probability && probability < 1.0) {
            return Err(PostprocessError::ProbabilityOutOfRange(probability));
        }
        Ok(SuppressionPolicy {
            probability,
            overrides: BTreeMap::new(),
        })
    }

    pub fn with_override(mut self, level_id: impl Into<String>, threshold: i64) -> Self {
        self.overrides.insert(level_id.into(), threshold);
        self
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn threshold_for(
        &self,
        level: &LevelSpec,
        gamma: &BigRational,
        stability: u32,
        mechanism: Mechanism,
    ) -> Result<i64, PostprocessError> {
        if let Some(&t) = self.overrides.get(&level.level_id) {
            return Ok(t);
        }
        derive_threshold(&level.rho, gamma, stability, self.probability, mechanism)
    }
}

/// One suppressed row, recorded for the curator-only log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuppressionLogEntry {
    pub level_id: String,
    pub group: PopulationGroup,
    pub noisy_total: i64,
    pub threshold: i64,
}

/// Removes sub-state Total-tier rows whose noisy total is strictly below
/// the level's threshold. Nation and state rows, total-only rows, and
/// sex-by-age rows always survive. Levels absent from `thresholds` are left
/// untouched.
pub fn suppress(
    tables: Vec<NoisyTable>,
    thresholds: &BTreeMap<String, i64>,
) -> (Vec<NoisyTable>, Vec<SuppressionLogEntry>) {
    let mut kept = Vec::with_capacity(tables.len());
    let mut log = Vec::new();
    for table in tables {
        let eligible = table.tier == Tier::Total && table.group.geo_level.is_sub_state();
        if eligible {
            if let Some(&threshold) = thresholds.get(&table.level_id) {
                let noisy_total = table.cells.get(TOTAL_CELL).copied().unwrap_or(0);
                if noisy_total < threshold {
                    log.push(SuppressionLogEntry {
                        level_id: table.level_id.clone(),
                        group: table.group.clone(),
                        noisy_total,
                        threshold,
                    });
                    continue;
                }
            }
        }
        kept.push(table);
    }
    (kept, log)
}

/// P[n + X < T]: the chance a group with true total `n` is suppressed,
/// by exact pmf summation (X <= T - n - 1).
pub fn suppression_probability(n: i64, dist: &DiscreteGaussian, threshold: i64) -> f64 {
    dist.cdf(threshold - n - 1)
}

/// E[X | n + X >= T]: the expected noise in a published total, by pmf
/// summation over the release region. Far above the threshold this tends to
/// zero; far below, conditioning forces the noise up toward T - n.
pub fn release_bias(n: i64, dist: &DiscreteGaussian, threshold: i64) -> f64 {
    let boundary = threshold - n;
    let window = dist.window();
    if boundary > window {
        // release requires noise beyond the support window; the conditional
        // mean degenerates to the boundary itself
        return boundary as f64;
    }
    let lo = boundary.max(-window);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    // tail-first accumulation, matching the distribution's own summation
    for x in (lo..=window).rev() {
        let p = dist.pmf(x);
        numerator += x as f64 * p;
        denominator += p;
    }
    if denominator <= 0.0 {
        return boundary as f64;
    }
    numerator / denominator
}

/// The continuous hazard-rate form sigma * phi(a / sigma) / (1 - Phi(a /
/// sigma)) with a = T - n: a closed-form cross-check for `release_bias`,
/// accurate to O(1 / sigma).
pub fn release_bias_continuous(n: i64, sigma: f64, threshold: i64) -> f64 {
    let z = (threshold - n) as f64 / sigma;
    let phi = (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let upper_tail = 0.5 * erfc(z / std::f64::consts::SQRT_2);
    sigma * phi / upper_tail
}

/// Data-independent map from population group to the level that tabulates
/// it, built from the keysets. The coterminous fixup consults it to know
/// which rows may exist at all.
#[derive(Debug, Clone, Default)]
pub struct GroupLocator {
    by_group: BTreeMap<PopulationGroup, String>,
}

impl GroupLocator {
    pub fn from_keysets(keysets: &[KeySet]) -> Self {
        let mut by_group = BTreeMap::new();
        for keyset in keysets {
            for kg in &keyset.groups {
                by_group.insert(kg.group.clone(), keyset.level_id.clone());
            }
        }
        GroupLocator { by_group }
    }

    pub fn level_of(&self, group: &PopulationGroup) -> Option<&str> {
        self.by_group.get(group).map(String::as_str)
    }

    /// Iteration ids tabulated at one geographic entity, in sorted order.
    fn iterations_at(&self, geo_level: GeoLevel, entity_id: &str) -> Vec<&str> {
        let start = PopulationGroup {
            geo_level,
            entity_id: entity_id.to_string(),
            iteration_id: String::new(),
        };
        self.by_group
            .range(start..)
            .take_while(|(g, _)| g.geo_level == geo_level && g.entity_id == entity_id)
            .map(|(g, _)| g.iteration_id.as_str())
            .collect()
    }
}

/// Reconciles coterminous geographic entities after suppression. Per set
/// and per characteristic iteration: members are scanned most-preferred
/// summary level first; the first member with a surviving row donates its
/// data, which overwrites the other members' rows (recreating rows that
/// suppression removed). If every member is suppressed, the set stays
/// suppressed. Member/iteration pairs outside the tabulated universe are
/// skipped. Running the fixup twice changes nothing.
pub fn coterminous_fixup(
    tables: &mut Vec<NoisyTable>,
    spec: &CoterminousSpec,
    locator: &GroupLocator,
) {
    let mut position: BTreeMap<PopulationGroup, usize> = tables
        .iter()
        .enumerate()
        .map(|(i, t)| (t.group.clone(), i))
        .collect();

    for set in &spec.sets {
        // declared member order refined by the level preference order
        let mut members: Vec<&(GeoLevel, String)> = set.members.iter().collect();
        members.sort_by_key(|(geo_level, _)| {
            spec.order
                .iter()
                .position(|l| l == geo_level)
                .unwrap_or(usize::MAX)
        });

        let mut iteration_ids: BTreeSet<&str> = BTreeSet::new();
        for (geo_level, entity_id) in &members {
            iteration_ids.extend(locator.iterations_at(*geo_level, entity_id));
        }

        for iteration_id in iteration_ids {
            let candidates: Vec<(PopulationGroup, String)> = members
                .iter()
                .filter_map(|(geo_level, entity_id)| {
                    let group = PopulationGroup {
                        geo_level: *geo_level,
                        entity_id: entity_id.clone(),
                        iteration_id: iteration_id.to_string(),
                    };
                    let level_id = locator.level_of(&group)?.to_string();
                    Some((group, level_id))
                })
                .collect();
            let Some(donor) = candidates
                .iter()
                .find_map(|(group, _)| position.get(group).copied())
            else {
                continue; // every member suppressed: the set stays suppressed
            };
            let donor_table = tables[donor].clone();
            for (group, level_id) in &candidates {
                match position.get(group) {
                    Some(&i) => {
                        tables[i].tier = donor_table.tier;
                        tables[i].cells = donor_table.cells.clone();
                        tables[i].derived = donor_table.derived.clone();
                    }
                    None => {
                        let recreated = NoisyTable::new(
                            group.clone(),
                            level_id.clone(),
                            donor_table.tier,
                            donor_table.cells.clone(),
                            donor_table.derived.clone(),
                        );
                        position.insert(group.clone(), tables.len());
                        tables.push(recreated);
                    }
                }
            }
        }
    }
}
