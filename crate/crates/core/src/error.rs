use std::path::PathBuf;

use thiserror::Error;

use crate::data::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// One or more type invariants failed; the first violation is shown.
    #[error("{} ({} violation(s) in total)", .0.first().map(|v| v.to_string()).unwrap_or_default(), .0.len())]
    Invalid(Vec<Violation>),

    #[error("members {first} and {second} share no hold-out example")]
    EmptyOverlap { first: String, second: String },

    #[error("lambda {0} is outside the open interval (0, 2)")]
    LambdaOutOfRange(f64),

    #[error("delta {0} is outside the open interval (0, 1)")]
    DeltaOutOfRange(f64),

    #[error("sample size must be at least 1")]
    EmptySample,

    #[error("prior weight {value} of member {index} is not strictly positive")]
    NonPositivePrior { index: usize, value: f64 },

    #[error("weight vector has length {found}, expected {expected}")]
    WeightLength { expected: usize, found: usize },

    #[error("weights are not a probability vector: {0}")]
    NotOnSimplex(String),

    #[error("weight {value} of member {index} is below the interior floor {floor}")]
    BelowFloor { index: usize, value: f64, floor: f64 },

    #[error("Hoeffding bound requires p_max < 1/2, got {0}")]
    NotBetterThanChance(f64),

    #[error("averaging aggregation needs probability predictions, the set is in hard-label mode")]
    HardModeAverage,

    #[error("cannot draw {requested} members from a pool of {pool}")]
    SubsetTooLarge { requested: usize, pool: usize },

    #[error("test-time cross-validation needs at least 2 examples, got {0}")]
    TooFewExamples(usize),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("invalid optimizer config: {0}")]
    Config(String),
}
