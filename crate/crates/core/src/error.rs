use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the planning core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value in feature column `{column}` at row {row}")]
    MissingValue { row: usize, column: String },

    #[error("table has no data rows")]
    EmptyTable,

    #[error("feature `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("feature statistics have not been computed")]
    StatsMissing,

    #[error("dataset is invalid: {0}")]
    InvalidDataset(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("required predictor `{0}` is missing")]
    MissingRequired(String),

    #[error("unknown assay `{0}`")]
    UnknownAssay(String),

    #[error("feature `{0}` is already part of the belief")]
    AlreadyIncorporated(String),

    #[error("assay `{0}` was already measured")]
    AlreadyMeasured(String),

    #[error("belief collapsed off target support")]
    BeliefCollapsed,

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("truncated normal rejection loop exceeded {0} draws")]
    RejectionCap(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
