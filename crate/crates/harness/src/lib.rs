//! Experiment orchestration for the training core: configuration files,
//! single runs with persisted reports, the noise sweep and the ablation
//! suite.

pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod suite;

pub use config::{ExperimentConfig, Overrides, Variant};
pub use error::HarnessError;
