use alloc::string::String;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("index {index} out of range for batch of {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate sample index {0}")]
    DuplicateIndex(usize),

    #[error("column {0} of the coupling has zero mass")]
    ZeroColumn(usize),

    #[error("cost matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("no pair with differing labels across the two batches")]
    NoCrossLabelPair,

    #[error("differently labelled points coincide (distance 0)")]
    ZeroCrossLabelDistance,

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("training diverged at epoch {0}")]
    Diverged(usize),

    #[error("malformed model bytes: {0}")]
    Format(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
