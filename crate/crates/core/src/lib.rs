//! Training-free open-set recognition over embedding matrices.
//!
//! Given unit-norm sample embeddings and one anchor embedding per known class,
//! the crate classifies samples zero-shot, scores how "unknown" each one looks,
//! estimates a score threshold without labels (Box-Cox + two-component GMM),
//! and optionally filters unknown-class feature components through SVD
//! subspaces before re-scoring.
//!
//! The main entry point is [`pipeline::run_clipxpert`].

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bgat;
pub mod boxcox;
pub mod data_io;
mod error;
pub mod gmm1d;
pub mod metrics;
pub mod pipeline;
pub mod scoring;
pub mod suff;

pub use error::{Error, Result};

pub use bgat::{estimate_threshold, BgatOptions, BoxCoxMode, ThresholdEstimate, ThresholdMethod};
pub use data_io::{ClassCatalog, EmbeddingMatrix, LabelVector, SyntheticConfig, SyntheticData};
pub use gmm1d::{GmmFit, GmmOptions};
pub use metrics::EvalResult;
pub use pipeline::{PipelineConfig, PredictionReport, ThresholdStrategy};
pub use scoring::{ProbMatrix, ScoreVector, Scorer};
