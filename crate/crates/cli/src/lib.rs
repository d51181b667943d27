//! Library side of the `hte` command: configuration, the pipeline stages
//! behind each subcommand, run manifests and report assembly.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{RunConfig, SimulateConfig};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use pipeline::{run_descriptives, run_estimate, run_simulate, run_support, Overrides};
pub use report::run_report;
