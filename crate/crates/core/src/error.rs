use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("probability {0} is outside the allowed range")]
    InvalidProbability(f64),

    #[error("mask entry {index} is {value}, expected 0 or 1")]
    InvalidMask { index: usize, value: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("forward cache does not match this request: {0}")]
    CacheMismatch(&'static str),

    #[error("cross-entropy requires a softmax output layer")]
    LossRequiresSoftmax,

    #[error("gated width {width} exceeds the enumeration cap of {cap}")]
    WidthCapExceeded { width: usize, cap: usize },

    #[error("scale entry {index} = {value} lies outside [{lower}, {upper}]")]
    InfeasibleScale {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("feasibility repair did not converge after {iterations} iterations (violation {violation:e})")]
    RepairDidNotConverge { iterations: usize, violation: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("dataset has {size} examples, need at least {min}")]
    DatasetTooSmall { size: usize, min: usize },

    #[error("optimization diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("{path}: bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad model or scale file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category used for CLI exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidMask { .. }
            | Error::LabelOutOfRange { .. }
            | Error::InvalidNetwork(_)
            | Error::CacheMismatch(_)
            | Error::LossRequiresSoftmax
            | Error::InvalidProbability(_) => "contract",
            Error::InvalidConfig(_) | Error::Parse { .. } => "config",
            Error::WidthCapExceeded { .. } => "oracle",
            Error::InfeasibleScale { .. } | Error::RepairDidNotConverge { .. } => "scale",
            Error::Empty(_) | Error::DatasetTooSmall { .. } => "data",
            Error::Diverged { .. } => "divergence",
            Error::IdxMagic { .. } | Error::Truncated { .. } | Error::CountMismatch { .. } => {
                "data"
            }
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "data" => 3,
            "io" => 4,
            "format" => 5,
            "divergence" => 6,
            "scale" => 7,
            "oracle" => 8,
            _ => 1,
        }
    }
}
