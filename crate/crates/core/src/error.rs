use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("root finding did not converge: {0}")]
    Convergence(String),

    #[error("subsample too small: band ({a}, {b}) of n = {n} has {m} observations, need at least {min}")]
    SubsampleTooSmall {
        a: f64,
        b: f64,
        n: usize,
        m: usize,
        min: usize,
    },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    /// The plug-in variance of a normalised statistic came out non-positive.
    #[error(
        "non-positive normaliser for {statistic}: squared value {value:e} \
         (n = {n}, sigma1^2 = {sigma1_sq:e}, sigma2^2 = {sigma2_sq:e}, r = {r:e})"
    )]
    NonPositiveNormaliser {
        statistic: &'static str,
        value: f64,
        n: usize,
        sigma1_sq: f64,
        sigma2_sq: f64,
        r: f64,
    },

    #[error("too many failed replications: {failed} of {total} ({reason})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        reason: String,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
