//! Key=value config files for the run and plan verbs.
//!
//! One `key = value` pair per line, `#` comments, no sections. Every DP
//! parameter lives in the file (never in environment variables) so a run's
//! privacy posture is auditable from the config alone. Paths are resolved
//! relative to the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_rational::BigRational;
use num_traits::Signed;
use thiserror::Error;

use safetab_core::data::{GeoLevel, IterationLevel};
use safetab_core::planner::{PlannerInput, PlannerLevel};
use safetab_core::rational::parse_decimal;
use safetab_core::accountant::PrivacyDefinition;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}:{line}: expected key = value")]
    Syntax { file: String, line: usize },
    #[error("{file}:{line}: unknown key {key:?}")]
    UnknownKey {
        file: String,
        line: usize,
        key: String,
    },
    #[error("{file}:{line}: duplicate key {key:?}")]
    DuplicateKey {
        file: String,
        line: usize,
        key: String,
    },
    #[error("{file}: missing required key {key:?}")]
    MissingKey { file: String, key: &'static str },
    #[error("{file}:{line}: invalid value for {key}: {message}")]
    InvalidValue {
        file: String,
        line: usize,
        key: String,
        message: String,
    },
}

/// Which national pass a row belongs to. The stateside and Puerto Rico
/// passes are fully independent: separate universes, ledgers, and noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Region {
    Us,
    Pr,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Us => "US",
            Region::Pr => "PR",
        }
    }

    pub fn parse(s: &str) -> Option<Region> {
        match s {
            "US" => Some(Region::Us),
            "PR" => Some(Region::Pr),
            _ => None,
        }
    }

    /// The nation entity id for this pass's geography universe.
    pub fn nation_id(self) -> &'static str {
        self.as_str()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub persons: PathBuf,
    pub geography: PathBuf,
    pub iterations: PathBuf,
    pub levels: PathBuf,
    pub total_only: PathBuf,
    pub coterminous: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub privacy_definition: PrivacyDefinition,
    pub gamma: BigRational,
    pub thresholds: (i64, i64, i64),
    pub suppression_probability: f64,
    pub seed: u64,
    /// None runs both passes; Some restricts to one.
    pub region: Option<Region>,
    pub pr_state: String,
    pub race_cap: u32,
}

#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub out_dir: PathBuf,
    pub levels: Vec<PlannerLevel>,
    pub gamma: BigRational,
    pub race_cap: u32,
    pub suppression_probability: f64,
    pub threshold_rhos: Vec<BigRational>,
    pub curve_rho: Option<BigRational>,
}

impl PlanConfig {
    pub fn to_input(&self) -> PlannerInput {
        PlannerInput {
            levels: self.levels.clone(),
            gamma: self.gamma.clone(),
            race_cap: self.race_cap,
            zero_suppression_probability: self.suppression_probability,
            extra_threshold_rhos: self.threshold_rhos.clone(),
            curve_rho: self.curve_rho.clone(),
        }
    }
}

fn scan<'a>(text: &'a str, file: &str) -> Result<Vec<(usize, &'a str, &'a str)>, ConfigError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::Syntax {
                file: file.to_string(),
                line,
            });
        };
        pairs.push((line, key.trim(), value.trim()));
    }
    Ok(pairs)
}

struct Fields<'a> {
    file: String,
    scalars: BTreeMap<&'a str, (usize, &'a str)>,
}

impl<'a> Fields<'a> {
    /// Collects scalar keys, rejecting duplicates; keys named in `repeated`
    /// are returned separately in file order.
    fn collect(
        text: &'a str,
        file: &str,
        known: &[&str],
        repeated: &[&str],
    ) -> Result<(Self, Vec<(usize, &'a str, &'a str)>), ConfigError> {
        let mut scalars = BTreeMap::new();
        let mut multi = Vec::new();
        for (line, key, value) in scan(text, file)? {
            if repeated.contains(&key) {
                multi.push((line, key, value));
                continue;
            }
            if !known.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    file: file.to_string(),
                    line,
                    key: key.to_string(),
                });
            }
            if scalars.insert(key, (line, value)).is_some() {
                return Err(ConfigError::DuplicateKey {
                    file: file.to_string(),
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok((
            Fields {
                file: file.to_string(),
                scalars,
            },
            multi,
        ))
    }

    fn take(&mut self, key: &str) -> Option<(usize, &'a str)> {
        self.scalars.remove(key)
    }

    fn require(&mut self, key: &'static str) -> Result<(usize, &'a str), ConfigError> {
        self.take(key).ok_or(ConfigError::MissingKey {
            file: self.file.clone(),
            key,
        })
    }

    fn invalid(&self, line: usize, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue {
            file: self.file.clone(),
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn path(&mut self, key: &'static str, base: &Path) -> Result<PathBuf, ConfigError> {
        let (_, value) = self.require(key)?;
        Ok(base.join(value))
    }

    fn decimal(&mut self, key: &'static str, default: &str) -> Result<BigRational, ConfigError> {
        match self.take(key) {
            None => Ok(parse_decimal(default).expect("literal")),
            Some((line, value)) => parse_decimal(value)
                .map_err(|e| self.invalid(line, key, e.to_string())),
        }
    }
}

pub fn parse_run_config(text: &str, file: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    const KNOWN: &[&str] = &[
        "persons",
        "geography",
        "iterations",
        "levels",
        "total_only",
        "coterminous",
        "out_dir",
        "privacy_definition",
        "gamma",
        "thresholds",
        "suppression_probability",
        "seed",
        "region",
        "pr_state",
        "race_cap",
    ];
    let (mut f, _) = Fields::collect(text, file, KNOWN, &[])?;

    let persons = f.path("persons", base)?;
    let geography = f.path("geography", base)?;
    let iterations = f.path("iterations", base)?;
    let levels = f.path("levels", base)?;
    let total_only = f.path("total_only", base)?;
    let coterminous = f.take("coterminous").map(|(_, v)| base.join(v));
    let out_dir = f.path("out_dir", base)?;

    let privacy_definition = match f.take("privacy_definition") {
        None => PrivacyDefinition::Zcdp,
        Some((_, "zcdp")) => PrivacyDefinition::Zcdp,
        Some((_, "puredp")) => PrivacyDefinition::PureDp,
        Some((line, other)) => {
            return Err(f.invalid(
                line,
                "privacy_definition",
                format!("expected zcdp or puredp, got {other:?}"),
            ))
        }
    };

    let gamma = f.decimal("gamma", "0.1")?;
    if !gamma.is_positive() || gamma >= parse_decimal("1").expect("literal") {
        return Err(ConfigError::InvalidValue {
            file: file.to_string(),
            line: 0,
            key: "gamma".to_string(),
            message: "must lie strictly between 0 and 1".to_string(),
        });
    }

    let thresholds = match f.take("thresholds") {
        None => (10, 100, 1000),
        Some((line, value)) => {
            let parts: Vec<_> = value.split(',').map(str::trim).collect();
            let parsed: Option<Vec<i64>> = parts.iter().map(|p| p.parse().ok()).collect();
            match parsed.as_deref() {
                Some([t1, t2, t3]) if t1 <= t2 && t2 <= t3 => (*t1, *t2, *t3),
                _ => {
                    return Err(f.invalid(
                        line,
                        "thresholds",
                        "expected three nondecreasing integers t1,t2,t3",
                    ))
                }
            }
        }
    };

    let suppression_probability = match f.take("suppression_probability") {
        None => 0.9999,
        Some((line, value)) => {
            let p: f64 = value
                .parse()
                .map_err(|_| f.invalid(line, "suppression_probability", "not a number"))?;
            if !(0.0 < p && p < 1.0) {
                return Err(f.invalid(
                    line,
                    "suppression_probability",
                    "must lie strictly between 0 and 1",
                ));
            }
            p
        }
    };

    let seed = match f.take("seed") {
        None => 0,
        Some((line, value)) => value
            .parse()
            .map_err(|_| f.invalid(line, "seed", "not an unsigned integer"))?,
    };

    let region = match f.take("region") {
        None => None,
        Some((line, value)) => Some(
            Region::parse(value)
                .ok_or_else(|| f.invalid(line, "region", "expected US or PR"))?,
        ),
    };

    let pr_state = match f.take("pr_state") {
        None => "72".to_string(),
        Some((_, value)) => value.to_string(),
    };

    let race_cap = match f.take("race_cap") {
        None => 8,
        Some((line, value)) => {
            let cap: u32 = value
                .parse()
                .map_err(|_| f.invalid(line, "race_cap", "not an unsigned integer"))?;
            if !(1..=8).contains(&cap) {
                return Err(f.invalid(line, "race_cap", "must lie in 1..=8"));
            }
            cap
        }
    };

    Ok(RunConfig {
        persons,
        geography,
        iterations,
        levels,
        total_only,
        coterminous,
        out_dir,
        privacy_definition,
        gamma,
        thresholds,
        suppression_probability,
        seed,
        region,
        pr_state,
        race_cap,
    })
}

pub fn parse_plan_config(text: &str, file: &str, base: &Path) -> Result<PlanConfig, ConfigError> {
    const KNOWN: &[&str] = &[
        "out_dir",
        "gamma",
        "race_cap",
        "suppression_probability",
        "curve_rho",
    ];
    let (mut f, multi) = Fields::collect(text, file, KNOWN, &["level", "threshold_rho"])?;

    let out_dir = f.path("out_dir", base)?;
    let gamma = f.decimal("gamma", "0.1")?;
    let race_cap = match f.take("race_cap") {
        None => 8,
        Some((line, value)) => value
            .parse()
            .map_err(|_| f.invalid(line, "race_cap", "not an unsigned integer"))?,
    };
    let suppression_probability = match f.take("suppression_probability") {
        None => 0.9999,
        Some((line, value)) => value
            .parse()
            .map_err(|_| f.invalid(line, "suppression_probability", "not a number"))?,
    };
    let curve_rho = match f.take("curve_rho") {
        None => None,
        Some((line, value)) => {
            Some(parse_decimal(value).map_err(|e| f.invalid(line, "curve_rho", e.to_string()))?)
        }
    };

    let mut levels = Vec::new();
    let mut threshold_rhos = Vec::new();
    for (line, key, value) in multi {
        match key {
            "threshold_rho" => threshold_rhos.push(
                parse_decimal(value).map_err(|e| f.invalid(line, key, e.to_string()))?,
            ),
            "level" => {
                // level = id|geo_level|iteration_level|moe
                let parts: Vec<_> = value.split('|').map(str::trim).collect();
                let [id, geo, iter, moe] = parts.as_slice() else {
                    return Err(f.invalid(line, key, "expected id|geo_level|iteration_level|moe"));
                };
                let geo_level = GeoLevel::parse(geo)
                    .ok_or_else(|| f.invalid(line, key, format!("unknown geo level {geo:?}")))?;
                let iteration_level = IterationLevel::parse(iter).ok_or_else(|| {
                    f.invalid(line, key, format!("unknown iteration level {iter:?}"))
                })?;
                let moe = moe
                    .parse()
                    .map_err(|_| f.invalid(line, key, "MOE must be an unsigned integer"))?;
                levels.push(PlannerLevel {
                    level_id: id.to_string(),
                    geo_level,
                    iteration_level,
                    moe,
                });
            }
            _ => unreachable!("repeated keys are level and threshold_rho"),
        }
    }
    if levels.is_empty() {
        return Err(ConfigError::MissingKey {
            file: file.to_string(),
            key: "level",
        });
    }

    Ok(PlanConfig {
        out_dir,
        levels,
        gamma,
        race_cap,
        suppression_probability,
        threshold_rhos,
        curve_rho,
    })
}
