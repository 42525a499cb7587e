use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not symmetric positive semidefinite ({0})")]
    NotPositiveSemidefinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative multiplier {value} at constraint {index}")]
    NegativeMultiplier { index: usize, value: f64 },

    #[error("solver cost trace has {len} entries, expected at least {needed}")]
    TraceTooShort { len: usize, needed: usize },

    #[error("updating period {tau_u} s is shorter than one iteration ({per_iter} s)")]
    BudgetTooSmall { tau_u: f64, per_iter: f64 },

    #[error("non-positive cost value {0} (costs must be floored above zero)")]
    NonPositiveCost(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("closed-loop contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
