//! Experiment orchestration around the `basinwalk` library: TOML plans and regime
//! presets, parallel sweeps with deterministic merging, binary checkpoint files,
//! CSV/JSON reports and the command-line front end.

pub mod bbck;
pub mod cli;
pub mod config;
mod error;
pub mod report;
pub mod sweep;

pub use error::{HarnessError, Result};
