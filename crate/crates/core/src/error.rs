// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The caller handed in something that violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A statistic or density produced a non-finite value.
    #[error("evaluation failed at x = {x:?}, theta = {theta:?}: {reason}")]
    Evaluation {
        x: Vec<f64>,
        theta: Vec<f64>,
        reason: String,
    },

    /// Split provenance was violated (e.g. calibration rows fed to diagnostics).
    #[error("provenance violation: {0}")]
    Provenance(String),

    #[error("{path}: row {row}: {reason}")]
    Malformed {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
