use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: expected input width {expected}, got {found}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at batch sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step {t} outside schedule range [0, {total}]")]
    StepOutOfRange { t: f64, total: usize },

    #[error("accuracy {0} outside [0, 1]")]
    AccuracyOutOfRange(f64),

    #[error("loss is not finite at lr_start = {lr_start:e}; try a smaller lr_start")]
    ImmediateDivergence { lr_start: f64 },

    #[error("inconclusive sweep, widen range: {0}")]
    InconclusiveSweep(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("{path}: wrong magic 0x{found:08x}, expected 0x{expected:08x}")]
    WrongMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file, need {needed} bytes, have {actual}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        actual: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: size {len} is not a multiple of record length {record}")]
    RecordSize {
        path: PathBuf,
        len: usize,
        record: usize,
    },

    #[error("unknown {what} '{name}'; valid: {valid}")]
    Unknown {
        what: &'static str,
        name: String,
        valid: String,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::InvalidConfig(_) => "invalid_config",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::AccuracyOutOfRange(_) => "accuracy_out_of_range",
            Error::ImmediateDivergence { .. } => "immediate_divergence",
            Error::InconclusiveSweep(_) => "inconclusive_sweep",
            Error::EmptyDataset => "empty_dataset",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::WrongMagic { .. } => "wrong_magic",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::RecordSize { .. } => "record_size",
            Error::Unknown { .. } => "unknown_name",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}
