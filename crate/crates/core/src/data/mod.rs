//! Data model: person records, public specification files, group mapping.
//!
//! Everything here is either confidential microdata (`PersonRecord`) or
//! public configuration (geography, characteristic iterations, level
//! budgets, total-only designations, coterminous sets). The split matters:
//! keysets and all published cell domains derive exclusively from the public
//! side, so the presence or absence of output rows can never depend on the
//! confidential records.

mod ingest;
mod keyset;
mod types;

pub use ingest::{
    parse_coterminous, parse_geography, parse_iterations, parse_levels, parse_persons,
    parse_total_only, validate_inputs, InputFile, ParsedInputs, RawInputs, ValidationIssue,
    ValidationReport,
};
pub use keyset::{build_keyset, map_to_groups, KeySet, KeysetGroup};
pub use types::{
    AloneFlag, BlockGeo, CharacteristicIteration, CoterminousSet, CoterminousSpec, GeoLevel,
    GeoUniverse, IterationLevel, LevelSpec, PersonRecord, PopulationGroup, Sex, TotalOnlySet,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataError {
    #[error("level {level_id:?} pairs AIANNH geography with regional iterations, which is not tabulated")]
    AiannhRegional { level_id: String },
    #[error("duplicate population group {0:?} in keyset")]
    DuplicateGroup(String),
}
