use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("column `{column}` is present in the data but not declared in the schema")]
    UnknownColumn { column: String },

    #[error("column `{column}` is declared in the schema but missing from the data")]
    MissingColumn { column: String },

    #[error("row {row}: target `{column}` must be positive, got {value}")]
    NonPositiveTarget { row: usize, column: String, value: f64 },

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Unparseable { row: usize, column: String, value: String },

    #[error("column `{column}`: label `{label}` was not seen when the catalog was built")]
    UnseenLabel { column: String, label: String },

    #[error("column `{column}` has zero variance on the fitting rows")]
    ZeroVariance { column: String },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("no profile can serve this disclosure without a withheld feature; disclose more or train one on demand")]
    NoFeasibleProfile,

    #[error("unknown profile `{0}`")]
    UnknownProfile(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("unsupported model file: {0}")]
    ModelFormat(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit status for the command line: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::UnknownProfile(_) => 2,
            Error::Divergence { .. } | Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
