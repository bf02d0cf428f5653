//! Batch front-end for the `supmin` solver: a JSON run configuration drives
//! the `solve`, `audit` and `check` pipelines, which write CSV paths and
//! profiles plus JSON reports into the configured output directory.

pub mod config;
pub mod json;
pub mod run;

pub use config::{ConfigError, RunConfig};
pub use run::{run_audit, run_check, run_solve, Status};
