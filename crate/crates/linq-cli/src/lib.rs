//! Experiment harness for the feature-linear MDP solvers: spec-driven
//! instance generation, seeded learner runs scored by the exact oracle,
//! axis sweeps, and machine-readable reports.

#![forbid(unsafe_code)]
// Validation uses `!(x > 0.0)` deliberately: it rejects NaN where `x <= 0.0`
// would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod instance_io;
pub mod report;
pub mod runner;
pub mod spec;
pub mod sweep;

pub use error::{CliError, Result};
