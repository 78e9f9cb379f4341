use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CboError>;

#[derive(Debug, Error)]
pub enum CboError {
    #[error("measure is empty")]
    Empty,

    #[error("objective returned NaN at point {index}")]
    NanObjective { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("density has non-positive total mass {mass}")]
    NonPositiveMass { mass: f64 },

    #[error("particle {particle} left the finite range")]
    NonFinitePosition { particle: usize },

    #[error("cell {cell} became negative ({value:e}); time step breaches the stability bound")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("cell {cell} became non-finite")]
    NonFiniteDensity { cell: usize },

    #[error("truncation margin violated: {0}")]
    Margin(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<CboError>,
    },

    #[error("I/O failure at {}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error at `{path}`: {message}")]
    ConfigParse { path: String, message: String },

    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    ConfigInvalid(Vec<String>),
}

impl CboError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        CboError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        CboError::Step {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CboError::Io {
            path: path.into(),
            source,
        }
    }
}
