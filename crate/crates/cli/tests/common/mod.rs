//! Shared fixtures: a three-state geography (including a Puerto Rico
//! pass), census-shaped iterations, the production eleven-level budget
//! plan, and deterministic synthetic persons.

use std::fs;
use std::path::{Path, PathBuf};

use safetab_cli::synth::generate_synthetic;
use safetab_core::data::{InputFile, ParsedInputs, RawInputs, ValidationReport};

pub const GEOGRAPHY: &str = "\
block|state|county|tract|place|aiannh
b01|44|44001|44001010100|p441|
b02|44|44001|44001010200|p441|a100
b03|44|44003|44003020100|p443|
b04|44|44003|44003020200|p443|
b05|25|25001|25001010100|p251|
b06|25|25001|25001010200||a100
b07|72|72001|72001010100|p721|
b08|72|72001|72001010200||
";

pub const ITERATIONS: &str = "\
iteration_id|level|alone_flag|codes|exclude_geo_levels
race_a_alone|Detailed|Alone|1000,1001|
race_a_combo|Detailed|AloneOrInAnyCombination|1000,1001|
race_b_alone|Detailed|Alone|1010,1011|
race_b_combo|Detailed|AloneOrInAnyCombination|1010,1011|
eth_x|Detailed|Alone|9000|
reg_ab|Regional|AloneOrInAnyCombination|1000,1001,1010,1011|
reg_eth|Regional|Alone|9000|
";

/// The production budget allocation: eleven levels totalling 4.944.
pub const LEVELS: &str = "\
level_id|geo_level|iteration_level|rho
nation_detailed|Nation|Detailed|2.134
state_detailed|State|Detailed|2.134
county_detailed|County|Detailed|0.159
tract_detailed|Tract|Detailed|0.159
place_detailed|Place|Detailed|0.159
aiannh_detailed|AIANNH|Detailed|0.159
nation_regional|Nation|Regional|0.008
state_regional|State|Regional|0.008
county_regional|County|Regional|0.008
tract_regional|Tract|Regional|0.008
place_regional|Place|Regional|0.008
";

pub const TOTAL_ONLY: &str = "\
iteration_id|geo_level
eth_x|State
";

/// Place p443 covers exactly the blocks of county 44003.
pub const COTERMINOUS: &str = "\
# order: State,County,Place
set_id|geo_level|entity_id
ri_east|County|44003
ri_east|Place|p443
";

pub fn raw_inputs(persons: &str) -> RawInputs {
    RawInputs {
        persons: InputFile::new("persons.txt", persons),
        geography: InputFile::new("geography.txt", GEOGRAPHY),
        iterations: InputFile::new("iterations.txt", ITERATIONS),
        levels: InputFile::new("levels.txt", LEVELS),
        total_only: InputFile::new("total_only.txt", TOTAL_ONLY),
        coterminous: Some(InputFile::new("coterminous.txt", COTERMINOUS)),
    }
}

/// Validates the fixture inputs with the given persons file, panicking on
/// any validation error.
pub fn parsed_inputs(persons: &str) -> ParsedInputs {
    let (parsed, report) = safetab_core::data::validate_inputs(&raw_inputs(persons), 8);
    assert!(report.passed(), "{}", report.render());
    parsed
}

/// Synthesizes a deterministic persons file over the fixture domains.
pub fn synth_persons(n: u64, seed: u64) -> String {
    let empty = parsed_inputs("block|race_codes|ethnicity|sex|age\n");
    generate_synthetic(&empty.blocks, &empty.iterations, n, 8, seed).unwrap()
}

#[allow(dead_code)]
pub fn validation_report(persons: &str) -> ValidationReport {
    safetab_core::data::validate_inputs(&raw_inputs(persons), 8).1
}

/// Writes the full fixture (spec files, persons, run config) into `dir`
/// and returns the config path.
#[allow(dead_code)]
pub fn write_fixture(dir: &Path, persons: &str, seed: u64) -> PathBuf {
    for (name, text) in [
        ("persons.txt", persons),
        ("geography.txt", GEOGRAPHY),
        ("iterations.txt", ITERATIONS),
        ("levels.txt", LEVELS),
        ("total_only.txt", TOTAL_ONLY),
        ("coterminous.txt", COTERMINOUS),
    ] {
        fs::write(dir.join(name), text).unwrap();
    }
    let config = format!(
        "persons = persons.txt\n\
         geography = geography.txt\n\
         iterations = iterations.txt\n\
         levels = levels.txt\n\
         total_only = total_only.txt\n\
         coterminous = coterminous.txt\n\
         out_dir = out\n\
         gamma = 0.1\n\
         thresholds = 10,100,1000\n\
         suppression_probability = 0.9999\n\
         seed = {seed}\n"
    );
    let path = dir.join("run.cfg");
    fs::write(&path, config).unwrap();
    path
}
