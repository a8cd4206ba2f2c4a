use crate::tensor::Axis;
use thiserror::Error;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown axis label `{0}`")]
    UnknownAxis(String),
    #[error("axis `{axis}` not present (tensor axes: {present:?})")]
    MissingAxis { axis: Axis, present: Vec<Axis> },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("bundle payload length mismatch: header implies {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("unsupported dtype `{0}` (expected complex128)")]
    UnknownDtype(String),
    #[error("unsupported byte order `{0}` (expected little)")]
    ByteOrder(String),
    #[error("insufficient calibration data: need {required} windows, have {available}")]
    InsufficientAcs { required: usize, available: usize },
    #[error("input extents {input:?} smaller than receptive field {field:?}")]
    ReceptiveField { input: Vec<usize>, field: Vec<usize> },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParam(_) | Error::Config(_) | Error::UnknownAxis(_) => ErrorKind::Config,
            Error::Numerical(_) | Error::NonFiniteLoss { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParam(msg.into()))
}
