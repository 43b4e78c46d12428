//! Experiment runner: JSON configs in, CSV/JSON/SVG results and a manifest
//! out.

pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod recipes;
pub mod tasks;

pub use config::{ExperimentConfig, Task};
pub use error::{CliError, Result};
pub use manifest::RunManifest;
pub use recipes::figure_recipes;
pub use tasks::{run, Options};
