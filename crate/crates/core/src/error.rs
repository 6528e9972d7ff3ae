use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: not an EMB1 file (bad magic)")]
    MagicMismatch { path: PathBuf },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("invalid class catalog: {0}")]
    InvalidCatalog(String),

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("energy scoring requires the cosine logit matrix")]
    MissingLogits,

    #[error("box-cox input must be positive, got {0}")]
    NonPositiveInput(f64),

    #[error("inverse box-cox undefined: lambda * value + 1 = {0} <= 0")]
    InverseDomainError(f64),

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("box-cox log-likelihood is degenerate at every lambda in the search range")]
    DegenerateValues,

    #[error("all values are identical")]
    DegenerateInput,

    #[error("mixture components failed to separate")]
    FailedToSeparate,

    #[error("both gaussians are identical; no unique intersection")]
    IdenticalDistributions,

    #[error("finite-difference step must be positive and smaller than sigma1, got {0}")]
    InvalidStep(f64),

    #[error("oracle threshold strategy requires ground-truth labels")]
    OracleNeedsLabels,

    #[error("auroc needs both known and unknown samples in the ground truth")]
    SingleClassOnly,

    #[error("matrix has no energy (all singular values are zero)")]
    ZeroMatrix,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
