use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("integration diverged: non-finite state after step from {state:?}")]
    IntegrationDiverged { state: Vec<f64> },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// `L_G h` vanished while the state-only part of the CBF condition fails.
    #[error("CBF-QP infeasible: |L_G h| = {lg_norm:e} with rhs = {rhs}")]
    InfeasibleConstraint { lg_norm: f64, rhs: f64 },

    #[error("MPC infeasible at state {state:?}: {reason}")]
    MpcInfeasible { state: Vec<f64>, reason: String },

    #[error("safety violation on the real trajectory at step {step} (epoch {epoch}): state {state:?}")]
    SafetyViolation { epoch: usize, step: usize, state: Vec<f64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: parse error in {field}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{path}: incompatible format version (found {found}, expected {expected})")]
    Version {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
