//! Reproducible experiment pipeline behind the `dlnice` command.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{ExperimentConfig, Method};
pub use error::{CliError, CliResult};
pub use pipeline::{Manifest, Run};
