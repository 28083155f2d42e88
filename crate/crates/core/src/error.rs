use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: grid has {expected} nodes, function has {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("kernel evaluated to non-finite value {value} at displacement {displacement}")]
    NonFiniteKernel { displacement: f64, value: f64 },

    #[error("tabulated value requested at {x}, outside table range [{lo}, {hi}]")]
    OutOfTableRange { x: f64, lo: f64, hi: f64 },

    #[error("partition value Z = {z} is not usable (nu too small for the grid/offset state?)")]
    PartitionFailure { z: f64 },

    #[error("density is not strictly positive at node {index} (value {value})")]
    NonPositiveDensity { index: usize, value: f64 },

    #[error("non-finite energy {value} at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize, value: f64 },

    #[error("solver failed at iteration {iteration}: {source}")]
    SolveFailed {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("continuation stage {stage} (nu = {nu}) failed: {source}")]
    StageFailed {
        stage: usize,
        nu: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown override key {0}")]
    UnknownOverride(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
