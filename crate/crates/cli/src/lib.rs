//! Scenario runner and verification suites behind the `geolab` binary.

pub mod error;
pub mod manifest;
pub mod run;
pub mod scenario;
pub mod suites;

pub use error::CliError;
pub use run::{run, RunOptions, RunSummary};
pub use scenario::Scenario;
