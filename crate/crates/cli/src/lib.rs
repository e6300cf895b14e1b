//! Batch front-end for `kernelrn`: reads a JSON run config, runs the
//! moment, density or von Neumann analysis and writes `report.json` plus
//! CSV tables. Reports depend only on the config and seed, never on the
//! number of worker threads.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{validate_config, RunConfig};
pub use error::CliError;
pub use report::{Command, Outcome, RunReport};
pub use run::{execute, run_moments, run_rn, run_vn};

/// Exit code for runtime and configuration errors.
pub const EXIT_ERROR: i32 = 3;
