//! Experiment runner for fluctuation-based sample selection.
//!
//! Synthetic data generation, IDX loading, the flat key-value experiment
//! config, and the `generate`, `train`, `histogram` and `sweep` commands
//! behind the `sft` binary.

pub mod commands;
pub mod config;
pub mod datagen;
pub mod error;
pub mod idx;
pub mod report;

pub use config::{DataKind, DataSpec, ExperimentSpec, NoiseSpec};
pub use error::{ExperimentError, Result};
