use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch {
        context: &'static str,
        detail: String,
    },

    #[error("invalid convolution spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes at pixel (n={n}, y={y}, x={x})")]
    LabelOutOfRange {
        label: u32,
        classes: usize,
        n: usize,
        y: usize,
        x: usize,
    },

    #[error("bad magic: expected \"TKT1\"")]
    BadMagic,

    #[error("truncated tensor file: {0}")]
    Truncated(String),

    #[error("tensor dims overflow: {0}")]
    DimsOverflow(String),

    #[error("dtype tag {found} does not match expected tag {expected} ({name})")]
    DtypeMismatch {
        found: u8,
        expected: u8,
        name: &'static str,
    },

    #[error("unsupported tensor rank {0}, expected 4")]
    BadRank(u8),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
