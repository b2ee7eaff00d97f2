use std::path::PathBuf;

use lossdev_core::inference::InferenceError;
use lossdev_core::metrics::MetricsError;
use lossdev_core::model::{ModelError, SimulationError};
use lossdev_core::predict::PredictError;
use lossdev_core::sbc::SbcError;
use lossdev_core::twostep::TwoStepError;
use lossdev_core::TriangleError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const RUNTIME: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    TwoStep(#[from] TwoStepError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sbc(#[from] SbcError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    /// Exit code for this error: bad input and configuration map to 1,
    /// failures while computing to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } | Error::Validation(_) | Error::Triangle(_) | Error::Model(_) => {
                exit::VALIDATION
            }
            Error::Inference(InferenceError::Config(_) | InferenceError::Model(_)) => exit::VALIDATION,
            Error::TwoStep(TwoStepError::Tau { .. } | TwoStepError::Rho { .. }) => exit::VALIDATION,
            Error::TwoStep(TwoStepError::EmptyBody { .. } | TwoStepError::EmptyTail { .. }) => exit::VALIDATION,
            Error::Predict(PredictError::Triangle(_) | PredictError::CapBase(_) | PredictError::Horizon { .. }) => {
                exit::VALIDATION
            }
            Error::Sbc(SbcError::Config(_)) => exit::VALIDATION,
            Error::Metrics(MetricsError::Mismatch { .. } | MetricsError::DifferentCells) => exit::VALIDATION,
            _ => exit::RUNTIME,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
