use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {message}{}", condition_suffix(*.condition))]
    Numerical {
        message: String,
        /// Ratio of largest to smallest magnitude pivot/eigenvalue, when one could be estimated.
        condition: Option<f64>,
    },

    #[error("eigensolver did not converge after {iterations} iterations (n = {n})")]
    NonConvergence { iterations: usize, n: usize },

    #[error("line is tangent to the norm ellipse; the two intersections coincide (|C1/R| = {ratio})")]
    Tangency { ratio: f64 },

    #[error("{}:{line}: {message}", file.display())]
    Ingestion {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn condition_suffix(condition: Option<f64>) -> String {
    match condition {
        Some(c) => format!(" (condition estimate {c:.3e})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, condition: Option<f64>) -> Self {
        Error::Numerical {
            message: msg.into(),
            condition,
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. } | Error::NonConvergence { .. } | Error::Tangency { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
