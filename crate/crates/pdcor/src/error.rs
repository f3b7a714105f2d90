//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a precondition (non-finite entries, bad ranges, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two operands that must agree in size do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Sample count too small for the requested statistic.
    #[error("sample count {actual} below minimum {required} for {what}")]
    SizeTooSmall {
        what: &'static str,
        required: usize,
        actual: usize,
    },

    /// A variance, norm, or denominator vanished where the operation
    /// has no defined value (as opposed to the defined zero branches).
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    /// Training diverged (non-finite loss or parameters).
    #[error("divergence: {0}")]
    Divergence(String),

    // Feature-dump container errors. Each corrupt-file condition gets its
    // own variant so callers can map them to distinct diagnostics.
    #[error("bad magic bytes (expected \"DCFD\")")]
    BadMagic,

    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("payload truncated: layer {layer} needs bytes up to offset {needed}, payload has {available}")]
    TruncatedPayload {
        layer: String,
        needed: u64,
        available: u64,
    },

    #[error("layer byte ranges overlap: {a} and {b}")]
    OffsetOverlap { a: String, b: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("layer {0} not found in dump")]
    LayerNotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code for this error: 1 usage, 2 data, 3 numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Degenerate(_) | Error::Divergence(_) => 3,
            _ => 2,
        }
    }
}
