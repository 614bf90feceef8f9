//! Configuration-driven experiment runner for `bvmlab-core`.
//!
//! A JSON config names a family, a sweep of `(d, n)` cells, metrics and a
//! seed; [`run`] evaluates every (cell, replicate, metric) task with a
//! seed derived by hashing, so output is independent of the worker count.
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod emit;
pub mod run;

pub use config::{Cell, ElSolveConfig, ExperimentConfig, Family, MethodParams, Metric, Prior};
pub use emit::{emit_plotdata, emit_table, read_table, Format};
pub use run::{run, RunOptions, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    ConfigInvalid(Vec<String>),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code: 1 for configuration errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ConfigInvalid(_) => 1,
            _ => 2,
        }
    }
}
