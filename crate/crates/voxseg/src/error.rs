//! Error type shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported datatype: {0}")]
    UnsupportedDatatype(String),
    #[error("dimension error: {0}")]
    DimensionError(String),
    #[error("corrupt data: {0}")]
    CorruptData(String),
    #[error("size mismatch: expected {expected} bytes, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("value {0} not representable as {1}")]
    UnrepresentableValue(f32, &'static str),
    #[error("chunk size must be >= 1")]
    InvalidChunkSize,
    #[error("empty schedule: no chunks to order")]
    EmptySchedule,
    #[error("structure has no foreground voxels")]
    EmptyStructure,
    #[error("prediction matches reference; no correction needed")]
    Converged,
    #[error("click coordinates out of bounds: {0}")]
    CoordinateError(String),
    #[error("cartilage has no bone-adjacent boundary")]
    NoBoneInterface,
    #[error("measurement unavailable: {0}")]
    MeasurementUnavailable(String),
    #[error("invalid phantom spec: {0}")]
    SpecError(String),
    #[error("dataset error: {0}")]
    DatasetError(String),
    #[error("training diverged: {0}")]
    DivergenceError(String),
    #[error("checkpoint incompatible with requested configuration: {0}")]
    ConfigMismatch(String),
    #[error("gradient check failed for {0}: max relative error {1:.3e}")]
    GradCheckFailure(String, f64),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

pub type Result<T> = std::result::Result<T, Error>;
