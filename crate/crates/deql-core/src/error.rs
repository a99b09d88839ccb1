//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by data loading, solving, and model persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: expected `user<TAB>item`, got {found} field(s)")]
    MalformedLine { path: String, line: usize, found: usize },

    #[error("{path}: no interactions found")]
    EmptyInput { path: String },

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "items with no interactions make the system singular: {} (drop or remap them, e.g. train --drop-zero-items)",
        format_indices(.0)
    )]
    ZeroColumns(Vec<usize>),

    #[error("system for column {column} is not positive definite (min pivot {min_pivot:.3e})")]
    NotPositiveDefinite { column: usize, min_pivot: f64 },

    #[error("matrix is not positive definite (min pivot {min_pivot:.3e})")]
    FactorizationFailed { min_pivot: f64 },

    #[error("degenerate pivot in zero-diagonal solve for column {column}")]
    DegeneratePivot { column: usize },

    #[error("rank-1 update is singular (denominator {denominator:.3e})")]
    SingularUpdate { denominator: f64 },

    #[error("covariance is near-singular (eigenvalue {eigenvalue:.3e} below {threshold:.3e})")]
    NearSingular { eigenvalue: f64, threshold: f64 },

    #[error("{0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_indices(idx: &[usize]) -> String {
    const SHOWN: usize = 8;
    if idx.len() <= SHOWN {
        format!("{idx:?}")
    } else {
        format!("{:?} and {} more", &idx[..SHOWN], idx.len() - SHOWN)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
