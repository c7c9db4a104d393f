use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("quadrature did not converge on [{a}, {b}] (estimate {estimate:e}, error {error:e})")]
    QuadratureNonConvergence { a: f64, b: f64, estimate: f64, error: f64 },

    #[error("moment matrix is not positive definite (order {order})")]
    NotPositiveDefinite { order: usize },

    #[error("profile family order {have} is insufficient, {need} required")]
    FamilyOrder { have: usize, need: usize },

    #[error("argument outside the kernel profile grid: {0}")]
    OutOfGrid(String),

    #[error("kernel profile grid too small: {0}")]
    GridExtent(String),

    #[error("fit window underflow: {0}")]
    WindowUnderflow(String),

    #[error("datum does not fit in the interior window: {0}")]
    SupportTooLarge(String),

    #[error("Duhamel quadrature under-resolved after {doublings} doublings (relative change {change:e})")]
    DuhamelUnderResolved { doublings: usize, change: f64 },

    #[error("Picard iteration is not contracting (ratios {ratios:?}); lower the amplitude or the horizon")]
    NonContraction { ratios: Vec<f64> },

    #[error("time step rejected at t = {time} (dt = {dt:e})")]
    StepRejected { time: f64, dt: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("numerical tolerance failure: {0}")]
    Tolerance(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Validation(_)
            | Error::FamilyOrder { .. }
            | Error::SupportTooLarge(_)
            | Error::GridExtent(_)
            | Error::OutOfGrid(_) => 2,
            Error::NonContraction { .. } => 3,
            Error::QuadratureNonConvergence { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::WindowUnderflow(_)
            | Error::DuhamelUnderResolved { .. }
            | Error::StepRejected { .. }
            | Error::Tolerance(_) => 4,
            Error::Io { .. } | Error::Format { .. } | Error::Json(_) => 1,
        }
    }
}
