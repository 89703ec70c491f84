use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("time {value} outside {range}")]
    TimeOutOfRange { value: f64, range: &'static str },

    #[error("{parameterization} update is singular at t = {t}")]
    Singular { parameterization: &'static str, t: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("unknown class id {id} (model has {classes} classes)")]
    UnknownClass { id: usize, classes: usize },

    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
