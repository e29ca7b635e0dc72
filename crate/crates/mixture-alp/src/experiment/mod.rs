//! Reproducible experiment harness: configuration files, multi-trial
//! execution with shared seeds, CSV traces and summaries, content-hashed
//! manifests, grid-search oracles, histograms, and a validation suite.

pub mod config;
pub mod histogram;
pub mod manifest;
pub mod oracle;
pub mod runner;
pub mod summary;
pub mod validate;

pub use config::{EnvConfig, ExperimentConfig, FeatureModeConfig, PenaltyBlock, SpdBlock};
pub use histogram::{features_histogram, write_histogram_csvs, HistogramResult};
pub use manifest::{verify as verify_manifest, Manifest};
pub use oracle::{oracle_grid_search, GridOracleResult};
pub use runner::{build_environment, run_experiment, ExperimentOutput};
pub use summary::{aggregate, write_summary_csv, SummaryRow};
pub use validate::{validate_suite, ValidationReport};
