use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("anchor {anchor} coincides with the device position (range {range:.3e} m)")]
    CoincidentGeometry { anchor: usize, range: f64 },

    #[error("noise standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("normal matrix is singular (condition number {cond:.3e})")]
    SingularNormalMatrix { cond: f64 },

    #[error("geometry is unobservable (Fisher information condition number {cond:.3e})")]
    UnobservableGeometry { cond: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
