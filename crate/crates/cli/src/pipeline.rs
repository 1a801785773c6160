//! End-to-end orchestration: validate, tabulate per region, postprocess,
//! write outputs.
//!
//! The stateside (US) and Puerto Rico (PR) passes are fully independent:
//! each gets its own geography universe, keysets, ledger, and noise
//! streams. Published files land in `out_dir/public`; curator-only
//! artifacts (validation report, suppression log) in `out_dir/private`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_rational::BigRational;

use safetab_core::accountant::{
    bounded_report, stability_for_race_cap, Ledger, LevelBudgetPlan, PrivacyBudget,
    PrivacyDefinition,
};
use safetab_core::data::{
    build_keyset, validate_inputs, BlockGeo, GeoUniverse, InputFile, ParsedInputs, PersonRecord,
    RawInputs, ValidationReport,
};
use safetab_core::engine::{
    run_safetab, AdaptiveConfig, GaussianNoise, GeometricNoise, Mechanism, NoiseSource,
};
use safetab_core::postprocess::{
    attach_marginals, coterminous_fixup, suppress, GroupLocator, SuppressionLogEntry,
    SuppressionPolicy,
};
use safetab_core::rational::format_exact;

use crate::config::{Region, RunConfig};
use crate::output::{render_csv, rows_from_tables, sort_rows, OutputRow, TABLE_IDS};
use crate::CliError;

pub const SUPPRESSION_LOG_HEADER: &str =
    "region,level_id,geo_level,entity_id,iteration_id,noisy_total,threshold\n";

pub fn read_input(path: &Path) -> Result<InputFile, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(InputFile { name, text })
}

pub fn load_raw(cfg: &RunConfig) -> Result<RawInputs, CliError> {
    Ok(RawInputs {
        persons: read_input(&cfg.persons)?,
        geography: read_input(&cfg.geography)?,
        iterations: read_input(&cfg.iterations)?,
        levels: read_input(&cfg.levels)?,
        total_only: read_input(&cfg.total_only)?,
        coterminous: cfg.coterminous.as_deref().map(read_input).transpose()?,
    })
}

pub fn validate(cfg: &RunConfig) -> Result<(ParsedInputs, ValidationReport), CliError> {
    let raw = load_raw(cfg)?;
    Ok(validate_inputs(&raw, cfg.race_cap as usize))
}

/// Blocks belonging to one pass: PR takes the configured state code, US
/// takes everything else. The nation entity is named after the pass.
fn region_universe(
    blocks: &BTreeMap<String, BlockGeo>,
    region: Region,
    pr_state: &str,
) -> GeoUniverse {
    let filtered: BTreeMap<String, BlockGeo> = blocks
        .iter()
        .filter(|(_, geo)| (geo.state == pr_state) == (region == Region::Pr))
        .map(|(id, geo)| (id.clone(), geo.clone()))
        .collect();
    GeoUniverse::new(region.nation_id(), filtered)
}

// Disjoint seed derivations keep the two passes' noise streams
// independent even though they share one configured seed.
fn region_seed(seed: u64, region: Region) -> u64 {
    match region {
        Region::Us => seed,
        Region::Pr => seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
    }
}

struct RegionOutput {
    rows: Vec<OutputRow>,
    log: Vec<SuppressionLogEntry>,
    accounting: String,
}

fn run_region(
    cfg: &RunConfig,
    parsed: &ParsedInputs,
    region: Region,
    seed: u64,
) -> Result<RegionOutput, CliError> {
    let universe = region_universe(&parsed.blocks, region, &cfg.pr_state);
    let records: Vec<PersonRecord> = parsed
        .persons
        .iter()
        .filter(|p| universe.contains_block(&p.block_id))
        .cloned()
        .collect();

    let keysets = parsed
        .levels
        .iter()
        .map(|level| build_keyset(level, &universe, &parsed.iterations, &parsed.total_only))
        .collect::<Result<Vec<_>, _>>()?;

    let stability = stability_for_race_cap(cfg.race_cap);
    let (mechanism, noise): (Mechanism, &dyn NoiseSource) = match cfg.privacy_definition {
        PrivacyDefinition::Zcdp => (Mechanism::DiscreteGaussian, &GaussianNoise),
        PrivacyDefinition::PureDp => (Mechanism::TwoSidedGeometric, &GeometricNoise),
    };
    let adaptive = AdaptiveConfig::new(cfg.gamma.clone(), cfg.thresholds, mechanism)?;
    let plan = LevelBudgetPlan::new(
        parsed
            .levels
            .iter()
            .map(|l| (l.level_id.clone(), l.rho.clone()))
            .collect(),
        cfg.gamma.clone(),
        cfg.privacy_definition,
    )?;
    let mut ledger = Ledger::new(&plan);

    let mut tables = run_safetab(
        &records,
        &parsed.levels,
        &parsed.iterations,
        &universe,
        &keysets,
        stability,
        &adaptive,
        noise,
        &mut ledger,
        region_seed(seed, region),
    )?;
    for table in &mut tables {
        if table.tier.is_sex_by_age() {
            attach_marginals(table)?;
        }
    }

    let policy = SuppressionPolicy::new(cfg.suppression_probability)?;
    let thresholds = parsed
        .levels
        .iter()
        .map(|level| {
            let t = policy.threshold_for(level, &cfg.gamma, stability, mechanism)?;
            Ok((level.level_id.clone(), t))
        })
        .collect::<Result<BTreeMap<String, i64>, CliError>>()?;
    let (mut kept, log) = suppress(tables, &thresholds);

    if let Some(spec) = &parsed.coterminous {
        let locator = GroupLocator::from_keysets(&keysets);
        coterminous_fixup(&mut kept, spec, &locator);
    }
    ledger.close();

    let mut accounting = format!(
        "region {} ({})\n",
        region.as_str(),
        cfg.privacy_definition.label()
    );
    for (level_id, budget) in plan.levels() {
        let remaining = ledger
            .remaining(level_id)
            .cloned()
            .unwrap_or_else(|| BigRational::from_integer(0.into()));
        let spent = budget - &remaining;
        accounting.push_str(&format!(
            "  level {level_id}: budget {}, spent {}, threshold {}\n",
            format_exact(budget),
            format_exact(&spent),
            thresholds[level_id],
        ));
    }
    let spent_total = ledger.spent_total();
    let bounded = bounded_report(&PrivacyBudget::new(
        spent_total.clone(),
        cfg.privacy_definition,
    )?);
    accounting.push_str(&format!(
        "  total spent (unbounded): {}\n  total spent (bounded, add/remove-record neighbors): {}\n",
        format_exact(&spent_total),
        format_exact(bounded.value()),
    ));

    Ok(RegionOutput {
        rows: rows_from_tables(region, &kept),
        log,
        accounting,
    })
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub regions: Vec<Region>,
    pub rows: usize,
    pub suppressed: usize,
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let (parsed, report) = validate(cfg)?;
    let public = cfg.out_dir.join("public");
    let private = cfg.out_dir.join("private");
    create_dir(&public)?;
    create_dir(&private)?;
    write(&private.join("validation_report.txt"), &report.render())?;
    if !report.passed() {
        return Err(CliError::Validation(report.render()));
    }

    let regions = match cfg.region {
        Some(region) => vec![region],
        None => vec![Region::Us, Region::Pr],
    };
    let mut rows = Vec::new();
    let mut log_csv = String::from(SUPPRESSION_LOG_HEADER);
    let mut suppressed = 0;
    let mut accounting = format!(
        "privacy accounting\ndefinition: {}\ntier thresholds: {},{},{}\nsuppression target: {}\nseed: {}\n\n",
        cfg.privacy_definition.label(),
        cfg.thresholds.0,
        cfg.thresholds.1,
        cfg.thresholds.2,
        cfg.suppression_probability,
        cfg.seed,
    );
    for &region in &regions {
        let out = run_region(cfg, &parsed, region, cfg.seed)?;
        rows.extend(out.rows);
        suppressed += out.log.len();
        for entry in &out.log {
            log_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                region.as_str(),
                entry.level_id,
                entry.group.geo_level.as_str(),
                entry.group.entity_id,
                entry.group.iteration_id,
                entry.noisy_total,
                entry.threshold,
            ));
        }
        accounting.push_str(&out.accounting);
    }
    sort_rows(&mut rows);

    write(&public.join("combined.csv"), &render_csv(rows.iter()))?;
    for table_id in TABLE_IDS {
        let filtered = render_csv(rows.iter().filter(|r| r.table_id == table_id));
        write(
            &public.join(format!("{}.csv", table_id.to_lowercase())),
            &filtered,
        )?;
    }
    write(&public.join("accounting.txt"), &accounting)?;
    write(&private.join("suppression_log.csv"), &log_csv)?;

    Ok(RunSummary {
        out_dir: cfg.out_dir.clone(),
        regions,
        rows: rows.len(),
        suppressed,
    })
}
