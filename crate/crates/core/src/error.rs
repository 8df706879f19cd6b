//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed {format} header: {detail}")]
    MalformedHeader {
        format: &'static str,
        detail: String,
    },

    #[error("non-finite sample in band {band}, pixel {pixel} (byte offset {offset})")]
    NonFiniteSample {
        band: usize,
        pixel: usize,
        offset: u64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("coordinate ({x}, {y}) outside {width}x{height} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("no palette entry for class {0}")]
    MissingPaletteEntry(u16),

    #[error("empty region")]
    EmptyRegion,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("thresholds must be strictly {order}: {detail}")]
    BadThresholds { order: &'static str, detail: String },

    #[error("no feature row for region {0}")]
    MissingFeature(u32),

    #[error("malformed parent table: {0}")]
    BadParentTable(String),

    #[error("structure size {size} exceeds brute-force oracle cap {cap}")]
    OracleCapExceeded { size: usize, cap: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training labels contain a single class")]
    SingleClassTraining,

    #[error("solver did not converge within {0} pair updates")]
    NonConvergence(u64),

    #[error("class {class} has {have} labeled pixels, need at least {need}")]
    InsufficientClass {
        class: u16,
        have: usize,
        need: usize,
    },

    #[error("kernel descriptor mismatch: {0}")]
    DescriptorMismatch(String),

    #[error("non-positive self-kernel {0}: upstream corruption")]
    NonPositiveSelfKernel(f64),

    #[error("malformed {format} file: {detail}")]
    MalformedFile {
        format: &'static str,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by an invalid configuration or parameter
    /// (as opposed to bad data or i/o). The CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::InvalidParameter(_) | Error::BadThresholds { .. }
        )
    }
}
