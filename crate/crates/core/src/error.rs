use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a documented precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A kernel system could not be factorized even after jitter escalation.
    #[error("factorization failed for n = {n} points (lengthscale {lengthscale:e}, signal variance {signal_variance:e}, noise variance {noise_variance:e}, last jitter {jitter:e})")]
    Factorization {
        n: usize,
        lengthscale: f64,
        signal_variance: f64,
        noise_variance: f64,
        jitter: f64,
    },

    /// A variance came out negative beyond rounding tolerance.
    #[error("negative variance {value:e} at grid index {index}")]
    NegativeVariance { index: usize, value: f64 },

    /// Every restart of the evidence optimizer failed.
    #[error("hyperparameter fit failed on all {restarts} restarts")]
    FitFailed {
        restarts: usize,
        /// `[lengthscale, signal_variance, noise_variance, mean_const]` of the best point seen, if any.
        best_partial: Option<[f64; 4]>,
    },

    /// An optimization run aborted mid-way; the completed records are kept.
    #[error("run failed at iteration {iteration} after {} completed records: {source}", partial.len())]
    RunFailed {
        iteration: usize,
        partial: Vec<crate::experiment::IterationRecord>,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
