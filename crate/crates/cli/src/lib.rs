//! Command-line pipeline around the `deltadpd` library: dataset generation,
//! surrogate and predistorter training, and threshold sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
