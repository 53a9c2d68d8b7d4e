//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Error, Debug)]
pub enum Error {
    #[error("schema parse error at line {line}: {message}")]
    SchemaParse { line: usize, message: String },

    #[error("duplicate field tag {tag} at line {line}")]
    DuplicateTag { tag: u32, line: usize },

    #[error("duplicate field name `{name}` at line {line}")]
    DuplicateField { name: String, line: usize },

    #[error("unsupported field type `{keyword}` at line {line} (only `float` and `string` are supported)")]
    UnsupportedType { keyword: String, line: usize },

    #[error("schema `{name}` has no fields")]
    EmptySchema { name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value produced by op `{op}`")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient produced by op `{op}`")]
    NonFiniteGradient { op: &'static str },

    #[error("non-finite loss at step {step}: {details}")]
    NonFiniteLoss { step: usize, details: String },

    #[error("byte 0x{byte:02x} in field `{field}` is not in the model vocabulary")]
    OutOfVocabulary { byte: u8, field: String },

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("gradient for unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("field `{field}` is not part of the record layout")]
    UnknownField { field: String },

    #[error("sigma must be strictly positive (component {index} is {value})")]
    NonPositiveSigma { index: usize, value: f64 },

    #[error("moving statistics have not been initialized (need at least one update)")]
    StatsUninitialized,

    #[error("batch of {0} is too small to estimate a covariance (need at least 2)")]
    BatchTooSmall(usize),

    #[error("covariance is not positive definite even after jitter escalation")]
    CholeskyFailed,

    #[error("field `{field}` contains a comma, refusing to serialize as comma-separated text")]
    CommaInField { field: String },

    #[error("checkpoint is incompatible: {0}")]
    CheckpointMismatch(String),

    #[error("output directory {0} already contains run outputs; pass --force to overwrite")]
    OutputDirOccupied(String),

    #[error("missing required input: {0}")]
    MissingInput(String),

    #[error("csv column `{0}` not found in header")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config file error: {0}")]
    Toml(String),
}

impl Error {
    /// Exit code the CLI maps this error to: 2 for configuration and
    /// input problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SchemaParse { .. }
            | Error::DuplicateTag { .. }
            | Error::DuplicateField { .. }
            | Error::UnsupportedType { .. }
            | Error::EmptySchema { .. }
            | Error::Config(_)
            | Error::Toml(_)
            | Error::MissingInput(_)
            | Error::MissingColumn(_)
            | Error::OutputDirOccupied(_)
            | Error::CheckpointMismatch(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
