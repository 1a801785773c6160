//! Differentially private tabulation of population-group counts.
//!
//! The pipeline takes person records plus public geography and
//! race/ethnicity iteration specifications and produces noisy total and
//! sex-by-age tables per population group under a zero-concentrated
//! differential privacy budget. Granularity is chosen adaptively per group,
//! small noisy totals are suppressed below a calibrated threshold, and
//! coterminous geographies are reconciled after the fact.
//!
//! Module map:
//! - [`rational`]: exact budget arithmetic (decimal config values never touch
//!   floats).
//! - [`noise`]: discrete Gaussian and two-sided geometric distributions with
//!   exact integer samplers.
//! - [`accountant`]: privacy-loss ledger, composition rules, bounded/unbounded
//!   reporting.
//! - [`data`]: record/spec ingestion, validation, group mapping, keysets.
//! - [`engine`]: the tabulation algorithms (per-level flatmap, adaptive
//!   two-stage per-group tables).
//! - [`postprocess`]: marginals, suppression, coterminous-geography fixup.
//! - [`planner`]: MOE/budget/threshold parameter computations and report
//!   emission.

pub mod accountant;
pub mod data;
pub mod engine;
pub mod noise;
pub mod planner;
pub mod postprocess;
pub mod rational;
