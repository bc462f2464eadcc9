use std::path::PathBuf;

use thiserror::Error;

use crate::admm::AdmmState;

/// Errors raised anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("nuisance design Z is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficientZ { rank: usize, cols: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("column {0} has zero variance")]
    ZeroVarianceColumn(usize),

    #[error("penalty argument must be nonnegative, got {0}")]
    NegativeArgument(f64),

    #[error("gamma = {gamma} is incompatible with rho = {rho} for {kind} (need gamma > {bound})")]
    IncompatibleGamma {
        kind: &'static str,
        gamma: f64,
        rho: f64,
        bound: f64,
    },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("Z'Z is singular")]
    SingularZ,

    #[error(
        "ADMM did not converge within {} iterations (primal {:.3e}, dual {:.3e})",
        .0.iter, .0.primal_norm, .0.dual_norm
    )]
    NotConverged(Box<AdmmState>),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("fusion path is empty")]
    EmptyPath,

    #[error("no converged point on the path")]
    NoConvergedPoint,

    #[error("residual sum of squares is zero; BIC is undefined")]
    PerfectFit,

    #[error("non-positive residual degrees of freedom ({0})")]
    NonPositiveDof(i64),

    #[error("Schur complement is singular")]
    SingularSchur,

    #[error("contrast covariance L S^-1 L' is singular")]
    SingularContrastCovariance,

    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("invalid degrees of freedom ({0}, {1})")]
    InvalidDof(f64, f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
