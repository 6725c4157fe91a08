use thiserror::Error;

/// Errors raised by kernels, model assembly and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} needs {expected} elements, got {actual}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("unknown variant `{0}` (expected micro, tiny, small, medium, large or micro-reduced)")]
    UnknownVariant(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bad magic: expected SIMVIT01")]
    BadMagic,
    #[error("truncated weight file: {0}")]
    Truncated(String),
    #[error("tensor `{name}`: {detail}")]
    TensorMismatch { name: String, detail: String },
    #[error("image format: {0}")]
    ImageFormat(String),
    #[error("gradient check: {0}")]
    GradCheck(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
