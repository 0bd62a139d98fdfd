use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite value appeared in the state during time stepping.
    #[error("numerical blow-up at t = {time} (site {site})")]
    NumericalBlowup { time: f64, site: usize },

    #[error("eigensolver did not converge for a {dim}x{dim} matrix (max |entry| = {max_abs:.3e}, frobenius = {frobenius:.3e})")]
    EigenNonConvergence { dim: usize, max_abs: f64, frobenius: f64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("perturbation leaves the distance observable blind after {attempts} attempts")]
    BlindPerturbation { attempts: u32 },

    #[error("classification failed for jx={jx}, jy={jy}, jz={jz}: {reason}")]
    ClassificationFailure { jx: f64, jy: f64, jz: f64, reason: String },

    #[error("checkpoint {path} is unusable: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that come from the numerics rather than from the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalBlowup { .. }
                | Error::EigenNonConvergence { .. }
                | Error::BlindPerturbation { .. }
                | Error::ClassificationFailure { .. }
        )
    }
}
