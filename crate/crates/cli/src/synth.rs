//! Synthetic person records over configured code and geography domains.
//!
//! Used by tests and demos: draws records uniformly over the blocks in the
//! geography file and the codes the iterations actually tabulate, so the
//! output always passes input validation. Generation is deterministic for
//! a given seed.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use safetab_core::data::{AloneFlag, BlockGeo, CharacteristicIteration};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synthetic generation needs at least one geography block")]
    NoBlocks,
    #[error("synthetic generation needs at least one tabulated race code")]
    NoRaceCodes,
    #[error("synthetic generation needs at least one alone-qualified code for ethnicity")]
    NoEthnicityCodes,
}

/// Race-set size distribution: most people report one code, a handful up
/// to eight. Truncated at the configured cap.
const SET_SIZE_WEIGHTS: [u32; 8] = [60, 20, 8, 5, 3, 2, 1, 1];

pub const PERSONS_HEADER: &str = "block|race_codes|ethnicity|sex|age";

/// Renders a persons file of `n` random records. An empty file (header
/// only) is always valid, so domain checks apply only when records are
/// requested.
pub fn generate_synthetic(
    blocks: &BTreeMap<String, BlockGeo>,
    iterations: &[CharacteristicIteration],
    n: u64,
    race_cap: u32,
    seed: u64,
) -> Result<String, SynthError> {
    let mut out = String::from(PERSONS_HEADER);
    out.push('\n');
    if n == 0 {
        return Ok(out);
    }

    let block_ids: Vec<&str> = blocks.keys().map(String::as_str).collect();
    let mut race_domain: Vec<&str> = Vec::new();
    let mut ethnicity_domain: Vec<&str> = Vec::new();
    for it in iterations {
        race_domain.extend(it.member_codes.iter().map(String::as_str));
        if it.alone == AloneFlag::Alone {
            ethnicity_domain.extend(it.member_codes.iter().map(String::as_str));
        }
    }
    race_domain.sort_unstable();
    race_domain.dedup();
    ethnicity_domain.sort_unstable();
    ethnicity_domain.dedup();

    if block_ids.is_empty() {
        return Err(SynthError::NoBlocks);
    }
    if race_domain.is_empty() {
        return Err(SynthError::NoRaceCodes);
    }
    if ethnicity_domain.is_empty() {
        return Err(SynthError::NoEthnicityCodes);
    }

    let cap = (race_cap as usize).clamp(1, 8).min(race_domain.len());
    let sizes = WeightedIndex::new(&SET_SIZE_WEIGHTS[..cap]).expect("nonempty positive weights");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    for _ in 0..n {
        let block = block_ids[rng.gen_range(0..block_ids.len())];
        let k = sizes.sample(&mut rng) + 1;
        let mut codes: Vec<&str> = rand::seq::index::sample(&mut rng, race_domain.len(), k)
            .iter()
            .map(|i| race_domain[i])
            .collect();
        codes.sort_unstable();
        let ethnicity = ethnicity_domain[rng.gen_range(0..ethnicity_domain.len())];
        let sex = if rng.gen_bool(0.5) { "Male" } else { "Female" };
        // mostly working ages, a sliver of centenarians
        let age: u32 = if rng.gen_ratio(1, 100) {
            rng.gen_range(100..=114)
        } else {
            rng.gen_range(0..=99)
        };
        out.push_str(&format!(
            "{block}|{}|{ethnicity}|{sex}|{age}\n",
            codes.join(",")
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use safetab_core::data::{
        map_to_groups, validate_inputs, GeoUniverse, InputFile, IterationLevel, LevelSpec,
        RawInputs,
    };
    use safetab_core::accountant::stability_for_race_cap;
    use safetab_core::data::GeoLevel;
    use safetab_core::rational::parse_decimal;

    const GEOGRAPHY: &str = "\
block|state|county|tract|place|aiannh
b01|44|44001|440010100|p1|
b02|44|44001|440010200||a1
b03|44|44003|440030100|p1|
b04|72|72001|720010100||
";

    fn iterations_text() -> String {
        let mut text = String::from("iteration_id|level|alone_flag|codes\n");
        for g in 0..3 {
            let codes: Vec<String> = (0..3).map(|c| format!("{}", 1000 + g * 10 + c)).collect();
            let joined = codes.join(",");
            text.push_str(&format!("g{g}a|Detailed|Alone|{joined}\n"));
            text.push_str(&format!(
                "g{g}c|Detailed|AloneOrInAnyCombination|{joined}\n"
            ));
        }
        for e in 0..2 {
            text.push_str(&format!("e{e}|Detailed|Alone|{}\n", 9000 + e));
        }
        text
    }

    fn raw_with_persons(persons: String) -> RawInputs {
        RawInputs {
            persons: InputFile::new("persons.txt", persons),
            geography: InputFile::new("geography.txt", GEOGRAPHY),
            iterations: InputFile::new("iterations.txt", iterations_text()),
            levels: InputFile::new(
                "levels.txt",
                "level_id|geo_level|iteration_level|rho\nstate_detailed|State|Detailed|0.5\n",
            ),
            total_only: InputFile::new("total_only.txt", "iteration_id|geo_level\n"),
            coterminous: None,
        }
    }

    fn parsed_specs() -> (BTreeMap<String, BlockGeo>, Vec<CharacteristicIteration>) {
        let raw = raw_with_persons(format!("{PERSONS_HEADER}\n"));
        let (parsed, report) = validate_inputs(&raw, 8);
        assert!(report.passed(), "{}", report.render());
        (parsed.blocks, parsed.iterations)
    }

    #[test]
    fn zero_records_yields_a_valid_header_only_file() {
        let (blocks, iterations) = parsed_specs();
        let text = generate_synthetic(&blocks, &iterations, 0, 8, 1).unwrap();
        assert_eq!(text, format!("{PERSONS_HEADER}\n"));
        let (_, report) = validate_inputs(&raw_with_persons(text), 8);
        assert!(report.passed());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let (blocks, iterations) = parsed_specs();
        let a = generate_synthetic(&blocks, &iterations, 100, 8, 7).unwrap();
        let b = generate_synthetic(&blocks, &iterations, 100, 8, 7).unwrap();
        let c = generate_synthetic(&blocks, &iterations, 100, 8, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn output_passes_validation_at_scale() {
        let (blocks, iterations) = parsed_specs();
        let text = generate_synthetic(&blocks, &iterations, 5000, 8, 3).unwrap();
        let (parsed, report) = validate_inputs(&raw_with_persons(text), 8);
        assert!(report.passed(), "{}", report.render());
        assert_eq!(parsed.persons.len(), 5000);
        assert!(parsed.persons.iter().all(|p| p.age <= 114));
        assert!(parsed.persons.iter().any(|p| p.race_codes.len() > 1));
    }

    #[test]
    fn group_membership_stays_within_the_stability_bound() {
        let (blocks, iterations) = parsed_specs();
        let text = generate_synthetic(&blocks, &iterations, 2000, 8, 5).unwrap();
        let (parsed, report) = validate_inputs(&raw_with_persons(text), 8);
        assert!(report.passed());
        let universe = GeoUniverse::new("US", parsed.blocks.clone());
        let level = LevelSpec {
            level_id: "state_detailed".to_string(),
            geo_level: GeoLevel::State,
            iteration_level: IterationLevel::Detailed,
            rho: parse_decimal("0.5").unwrap(),
        };
        let bound = stability_for_race_cap(8) as usize;
        for person in &parsed.persons {
            let groups = map_to_groups(person, &level, &parsed.iterations, &universe);
            assert!(groups.len() <= bound, "{} groups", groups.len());
        }
    }

    #[test]
    fn race_cap_limits_set_sizes() {
        let (blocks, iterations) = parsed_specs();
        let text = generate_synthetic(&blocks, &iterations, 1000, 2, 9).unwrap();
        let (parsed, report) = validate_inputs(&raw_with_persons(text), 2);
        assert!(report.passed(), "{}", report.render());
        assert!(parsed.persons.iter().all(|p| p.race_codes.len() <= 2));
    }

    #[test]
    fn empty_domains_are_rejected_when_records_are_requested() {
        let (blocks, iterations) = parsed_specs();
        assert!(matches!(
            generate_synthetic(&BTreeMap::new(), &iterations, 1, 8, 0),
            Err(SynthError::NoBlocks)
        ));
        assert!(matches!(
            generate_synthetic(&blocks, &[], 1, 8, 0),
            Err(SynthError::NoRaceCodes)
        ));
    }
}
