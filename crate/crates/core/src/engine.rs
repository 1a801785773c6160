//! Two-stage adaptive tabulation of population groups.
//!
//! Each level spends its budget once under parallel composition (a person
//! lands in at most `stability` groups, each tabulated at `rho_i /
//! stability`). Per group, a cheap noisy total (fraction `gamma` of the
//! group budget) picks the granularity tier; the remainder buys the final
//! counts over the tier's full cell domain. Groups never share randomness:
//! every group gets its own counter-mode stream, so a run is deterministic
//! given the seed yet embarrassingly parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::accountant::{
    mechanism_cost, AccountantError, Ledger, PrivacyBudget, PrivacyDefinition, Reservation,
};
use crate::data::{
    map_to_groups, CharacteristicIteration, GeoUniverse, KeySet, LevelSpec, PersonRecord,
    PopulationGroup, Sex,
};
use crate::noise::{DiscreteGaussian, NoiseError, RandomSource, TwoSidedGeometric};
use crate::rational::format_exact;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("gamma must lie strictly between 0 and 1, got {0}")]
    GammaOutOfRange(String),
    #[error("thresholds must be nondecreasing, got ({0}, {1}, {2})")]
    ThresholdsOutOfOrder(i64, i64, i64),
    #[error("level {level_id:?} has no keyset")]
    MissingKeyset { level_id: String },
    #[error(transparent)]
    Accounting(#[from] AccountantError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// The noise distribution family, tied to the accounting definition it
/// calibrates against (squared budget units vs linear).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    DiscreteGaussian,
    TwoSidedGeometric,
}

impl Mechanism {
    pub fn definition(self) -> PrivacyDefinition {
        match self {
            Mechanism::DiscreteGaussian => PrivacyDefinition::Zcdp,
            Mechanism::TwoSidedGeometric => PrivacyDefinition::PureDp,
        }
    }
}

/// Adaptive-tabulation parameters: the stage-1 budget fraction and the
/// three population thresholds separating the four granularity tiers.
#[derive(Debug, Clone)]
pub struct AdaptiveConfig {
    gamma: BigRational,
    thresholds: (i64, i64, i64),
    mechanism: Mechanism,
}

impl AdaptiveConfig {
    pub fn new(
        gamma: BigRational,
        thresholds: (i64, i64, i64),
        mechanism: Mechanism,
    ) -> Result<Self, EngineError> {
        if gamma <= BigRational::zero() || gamma >= BigRational::one() {
            return Err(EngineError::GammaOutOfRange(format_exact(&gamma)));
        }
        let (t1, t2, t3) = thresholds;
        if t1 > t2 || t2 > t3 {
            return Err(EngineError::ThresholdsOutOfOrder(t1, t2, t3));
        }
        Ok(AdaptiveConfig {
            gamma,
            thresholds,
            mechanism,
        })
    }

    pub fn gamma(&self) -> &BigRational {
        &self.gamma
    }

    pub fn thresholds(&self) -> (i64, i64, i64) {
        self.thresholds
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }
}

/// Published granularity of one group's table. Ordering reflects refinement:
/// coarser tiers sort first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tier {
    TotalOnly,
    Total,
    SexByAge4,
    SexByAge9,
    SexByAge23,
}

impl Tier {
    pub fn table_id(self) -> &'static str {
        match self {
            Tier::TotalOnly | Tier::Total => "T01001",
            Tier::SexByAge4 => "T02001",
            Tier::SexByAge9 => "T02002",
            Tier::SexByAge23 => "T02003",
        }
    }

    pub fn binning(self) -> Option<AgeBinning> {
        match self {
            Tier::TotalOnly | Tier::Total => None,
            Tier::SexByAge4 => Some(AgeBinning::Age4),
            Tier::SexByAge9 => Some(AgeBinning::Age9),
            Tier::SexByAge23 => Some(AgeBinning::Age23),
        }
    }

    pub fn is_sex_by_age(self) -> bool {
        self.binning().is_some()
    }

    /// Number of independently noised cells.
    pub fn cell_count(self) -> usize {
        match self.binning() {
            None => 1,
            Some(b) => 2 * b.bins().len(),
        }
    }
}

/// Age-bin layouts for the three sex-by-age tiers. Bins are inclusive
/// ranges; the top bin of each layout is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgeBinning {
    Age4,
    Age9,
    Age23,
}

const AGE4: &[(u32, Option<u32>)] = &[(0, Some(17)), (18, Some(44)), (45, Some(64)), (65, None)];

const AGE9: &[(u32, Option<u32>)] = &[
    (0, Some(4)),
    (5, Some(17)),
    (18, Some(24)),
    (25, Some(34)),
    (35, Some(44)),
    (45, Some(54)),
    (55, Some(64)),
    (65, Some(74)),
    (75, None),
];

const AGE23: &[(u32, Option<u32>)] = &[
    (0, Some(4)),
    (5, Some(9)),
    (10, Some(14)),
    (15, Some(17)),
    (18, Some(19)),
    (20, Some(20)),
    (21, Some(21)),
    (22, Some(24)),
    (25, Some(29)),
    (30, Some(34)),
    (35, Some(39)),
    (40, Some(44)),
    (45, Some(49)),
    (50, Some(54)),
    (55, Some(59)),
    (60, Some(61)),
    (62, Some(64)),
    (65, Some(66)),
    (67, Some(69)),
    (70, Some(74)),
    (75, Some(79)),
    (80, Some(84)),
    (85, None),
];

impl AgeBinning {
    pub fn bins(self) -> &'static [(u32, Option<u32>)] {
        match self {
            AgeBinning::Age4 => AGE4,
            AgeBinning::Age9 => AGE9,
            AgeBinning::Age23 => AGE23,
        }
    }

    pub fn bin_label(lo: u32, hi: Option<u32>) -> String {
        match hi {
            None => format!("{lo}+"),
            Some(hi) if hi == lo => format!("{lo}"),
            Some(hi) => format!("{lo}-{hi}"),
        }
    }

    pub fn bin_labels(self) -> Vec<String> {
        self.bins()
            .iter()
            .map(|&(lo, hi)| AgeBinning::bin_label(lo, hi))
            .collect()
    }

    pub fn bin_for(self, age: u32) -> usize {
        self.bins()
            .iter()
            .position(|&(lo, hi)| age >= lo && hi.is_none_or(|h| age <= h))
            .expect("bins partition all ages")
    }
}

/// Cell keys in noise-draw order: all male bins, then all female bins.
pub fn cell_keys(binning: AgeBinning) -> Vec<String> {
    let mut keys = Vec::new();
    for sex in Sex::both() {
        for label in binning.bin_labels() {
            keys.push(format!("{}:{label}", sex.as_str()));
        }
    }
    keys
}

pub const TOTAL_CELL: &str = "total";

/// One group's published counts. `derived` marks cells computed from other
/// cells after the fact (marginals) rather than separately noised. The
/// stage-1 selection total stays internal: it is never published and is
/// excluded from the debug rendering.
#[derive(Clone, PartialEq, Eq)]
pub struct NoisyTable {
    pub group: PopulationGroup,
    pub level_id: String,
    pub tier: Tier,
    pub cells: BTreeMap<String, i64>,
    pub derived: BTreeSet<String>,
    stage1_total: Option<i64>,
}

impl NoisyTable {
    /// A table with no retained selection state — how postprocessing
    /// materializes rows (the engine fills `stage1_total` internally).
    pub fn new(
        group: PopulationGroup,
        level_id: String,
        tier: Tier,
        cells: BTreeMap<String, i64>,
        derived: BTreeSet<String>,
    ) -> Self {
        NoisyTable {
            group,
            level_id,
            tier,
            cells,
            derived,
            stage1_total: None,
        }
    }

    #[cfg(test)]
    pub(crate) fn stage1_total(&self) -> Option<i64> {
        self.stage1_total
    }
}

impl fmt::Debug for NoisyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoisyTable")
            .field("group", &self.group)
            .field("level_id", &self.level_id)
            .field("tier", &self.tier)
            .field("cells", &self.cells)
            .field("derived", &self.derived)
            .finish_non_exhaustive()
    }
}

/// Integer-noise provider. `per_unit` is the budget per unit of squared
/// (concentrated DP) or absolute (pure DP) sensitivity; implementations add
/// iid noise at that scale to every coordinate.
pub trait NoiseSource: Sync {
    fn noisy_vector(
        &self,
        values: &[i64],
        per_unit: &PrivacyBudget,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<i64>, NoiseError>;
}

/// Discrete Gaussian noise with variance 1/(2 rho) per coordinate.
pub struct GaussianNoise;

impl NoiseSource for GaussianNoise {
    fn noisy_vector(
        &self,
        values: &[i64],
        per_unit: &PrivacyBudget,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<i64>, NoiseError> {
        let dist = DiscreteGaussian::from_rho(per_unit.value())?;
        Ok(values.iter().map(|&v| v + dist.sample(rng)).collect())
    }
}

/// Two-sided geometric noise at scale alpha = exp(-epsilon) per coordinate.
pub struct GeometricNoise;

impl NoiseSource for GeometricNoise {
    fn noisy_vector(
        &self,
        values: &[i64],
        per_unit: &PrivacyBudget,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<i64>, NoiseError> {
        let dist = TwoSidedGeometric::from_epsilon(per_unit.value())?;
        Ok(values.iter().map(|&v| v + dist.sample(rng)).collect())
    }
}

/// Test double: passes true counts through unchanged while budget
/// accounting proceeds normally. Lets tests pin tier decisions and
/// mechanism-invocation counts without Monte Carlo.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn noisy_vector(
        &self,
        values: &[i64],
        _per_unit: &PrivacyBudget,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<i64>, NoiseError> {
        Ok(values.to_vec())
    }
}

/// One vectorized mechanism invocation: debits the reservation by
/// sensitivity-scaled cost, then noises every coordinate at `per_unit`.
/// The debit precedes sampling so an overspent budget can never leak even
/// partially noised values.
pub fn noisy_count(
    values: &[i64],
    per_unit: &PrivacyBudget,
    sensitivity: u32,
    noise: &dyn NoiseSource,
    reservation: &mut Reservation,
    rng: &mut dyn RngCore,
) -> Result<Vec<i64>, EngineError> {
    let cost = mechanism_cost(sensitivity, per_unit);
    reservation.debit(&cost)?;
    Ok(noise.noisy_vector(values, per_unit, rng)?)
}

fn total_only_table(
    observations: &[(Sex, u32)],
    group: &PopulationGroup,
    level_id: &str,
    budget: &PrivacyBudget,
    noise: &dyn NoiseSource,
    reservation: &mut Reservation,
    rng: &mut dyn RngCore,
) -> Result<NoisyTable, EngineError> {
    let noisy = noisy_count(
        &[observations.len() as i64],
        budget,
        1,
        noise,
        reservation,
        rng,
    )?;
    Ok(NoisyTable {
        group: group.clone(),
        level_id: level_id.to_string(),
        tier: Tier::TotalOnly,
        cells: BTreeMap::from([(TOTAL_CELL.to_string(), noisy[0])]),
        derived: BTreeSet::new(),
        stage1_total: None,
    })
}

/// Tabulates one population group at budget `rho_i / stability`.
///
/// Total-only groups get a single noisy total at the full group budget.
/// Everything else runs the two-stage adaptive scheme: a selection total at
/// `gamma` times the budget, then the chosen tier's cells at exactly the
/// remainder — so the two stages always sum to the group budget in exact
/// arithmetic. Tier comparisons are strict: a selection total equal to a
/// threshold takes the finer tier.
pub fn tabulate_population_group(
    observations: &[(Sex, u32)],
    group: &PopulationGroup,
    level_id: &str,
    total_only: bool,
    budget: &PrivacyBudget,
    cfg: &AdaptiveConfig,
    noise: &dyn NoiseSource,
    rng: &mut dyn RngCore,
) -> Result<NoisyTable, EngineError> {
    let mut reservation = Reservation::new(group.label(), budget);
    if total_only {
        let table = total_only_table(
            observations,
            group,
            level_id,
            budget,
            noise,
            &mut reservation,
            rng,
        )?;
        debug_assert!(reservation.remaining().is_zero());
        return Ok(table);
    }

    let stage1_budget =
        PrivacyBudget::new(budget.value() * cfg.gamma(), budget.definition())?;
    let stage2_budget =
        PrivacyBudget::new(budget.value() - stage1_budget.value(), budget.definition())?;
    let stage1 = noisy_count(
        &[observations.len() as i64],
        &stage1_budget,
        1,
        noise,
        &mut reservation,
        rng,
    )?[0];

    let (t1, t2, t3) = cfg.thresholds();
    let tier = if stage1 < t1 {
        Tier::Total
    } else if stage1 < t2 {
        Tier::SexByAge4
    } else if stage1 < t3 {
        Tier::SexByAge9
    } else {
        Tier::SexByAge23
    };

    let cells = match tier.binning() {
        None => {
            // Total tier re-queries the count rather than reusing the
            // stage-1 estimate; only the re-query is published.
            let noisy = noisy_count(
                &[observations.len() as i64],
                &stage2_budget,
                1,
                noise,
                &mut reservation,
                rng,
            )?;
            BTreeMap::from([(TOTAL_CELL.to_string(), noisy[0])])
        }
        Some(binning) => {
            let keys = cell_keys(binning);
            let mut values = vec![0i64; keys.len()];
            let bins = binning.bins().len();
            for &(sex, age) in observations {
                let sex_offset = match sex {
                    Sex::Male => 0,
                    Sex::Female => bins,
                };
                values[sex_offset + binning.bin_for(age)] += 1;
            }
            let noisy = noisy_count(
                &values,
                &stage2_budget,
                1,
                noise,
                &mut reservation,
                rng,
            )?;
            keys.into_iter().zip(noisy).collect()
        }
    };

    debug_assert!(reservation.remaining().is_zero());
    Ok(NoisyTable {
        group: group.clone(),
        level_id: level_id.to_string(),
        tier,
        cells,
        derived: BTreeSet::new(),
        stage1_total: Some(stage1),
    })
}

/// Runs the full tabulation: levels sequentially, groups within a level in
/// parallel. Each level debits its whole budget from the ledger once —
/// parallel composition over its groups covers every per-group tabulation
/// at `rho_i / stability`. Every keyset group is tabulated, including empty
/// ones, so outputs never reveal which groups are empty.
#[allow(clippy::too_many_arguments)]
pub fn run_safetab(
    records: &[PersonRecord],
    levels: &[LevelSpec],
    iterations: &[CharacteristicIteration],
    universe: &GeoUniverse,
    keysets: &[KeySet],
    stability: u32,
    cfg: &AdaptiveConfig,
    noise: &dyn NoiseSource,
    ledger: &mut Ledger,
    seed: u64,
) -> Result<Vec<NoisyTable>, EngineError> {
    let definition = cfg.mechanism().definition();
    let mut out = Vec::new();
    for (level_idx, level) in levels.iter().enumerate() {
        let keyset = keysets
            .iter()
            .find(|k| k.level_id == level.level_id)
            .ok_or_else(|| EngineError::MissingKeyset {
                level_id: level.level_id.clone(),
            })?;
        ledger.spend("tabulate", &level.level_id, &level.rho)?;
        let per_group = PrivacyBudget::new(
            &level.rho / BigRational::from_integer(stability.into()),
            definition,
        )?;

        let index: BTreeMap<&PopulationGroup, usize> = keyset
            .groups
            .iter()
            .enumerate()
            .map(|(i, kg)| (&kg.group, i))
            .collect();
        let mut observations: Vec<Vec<(Sex, u32)>> = vec![Vec::new(); keyset.groups.len()];
        for record in records {
            for group in map_to_groups(record, level, iterations, universe) {
                if let Some(&i) = index.get(&group) {
                    observations[i].push((record.sex, record.age));
                }
            }
        }

        let tables: Result<Vec<NoisyTable>, EngineError> = keyset
            .groups
            .par_iter()
            .enumerate()
            .map(|(group_idx, kg)| {
                let mut rng =
                    RandomSource::new(seed, ((level_idx as u64) << 32) | group_idx as u64);
                tabulate_population_group(
                    &observations[group_idx],
                    &kg.group,
                    &keyset.level_id,
                    kg.total_only,
                    &per_group,
                    cfg,
                    noise,
                    &mut rng,
                )
            })
            .collect();
        out.extend(tables?);
    }
    Ok(out)
}
