use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A support was empty, unsorted, overlapping, or out of range.
    #[error("invalid support: {0}")]
    InvalidSupport(String),

    /// A kernel grid carries fewer than the minimum points per 1/W.
    #[error("under-resolved kernel: {0}")]
    UnderResolvedKernel(String),

    /// The eigenvalue transition equation has no root in (0, 1/2).
    #[error("transition undefined: {0}")]
    TransitionUndefined(String),

    /// Covariance eigenvalue clipping removed more mass than tolerated.
    #[error("covariance ill-conditioned at this resolution: {0}")]
    CovarianceIllConditioned(String),

    /// Two spectra were combined but live on different quadrature grids.
    #[error("mismatched grids: {0}")]
    MismatchedGrids(String),

    /// A configuration value violated a documented precondition.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Numerical guard tripped (eigenvalue range, divergent solve, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
