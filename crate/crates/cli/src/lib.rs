//! Command-line driver: config parsing, validation, two-pass runs,
//! parameter planning, synthetic data.
//!
//! Every failure class maps to a distinct exit code so operators can
//! distinguish a bad config (2) from bad input data (3), a privacy-budget
//! violation (4), or an I/O problem (5).

pub mod config;
pub mod output;
pub mod pipeline;
pub mod synth;

use thiserror::Error;

use safetab_core::accountant::AccountantError;
use safetab_core::data::DataError;
use safetab_core::engine::EngineError;
use safetab_core::planner::PlannerError;
use safetab_core::postprocess::PostprocessError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Planner(_) => 2,
            CliError::Validation(_) | CliError::Data(_) | CliError::Synth(_) => 3,
            CliError::Accountant(_) | CliError::Engine(_) | CliError::Postprocess(_) => 4,
            CliError::Io { .. } => 5,
        }
    }
}
