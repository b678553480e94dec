use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dims mismatch: raw volume is {raw:?}, segmentation is {seg:?}")]
    DimsMismatch { raw: [usize; 3], seg: [usize; 3] },
    #[error("{file}: payload has {actual} bytes, expected {expected}")]
    PayloadSize {
        file: String,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported {field} dtype {dtype:?}")]
    UnsupportedDtype { field: &'static str, dtype: String },
    #[error("instance {0} has no attributes")]
    MissingAttributes(u32),
    #[error("malformed schema: {0}")]
    Schema(String),
    #[error("malformed attribute row for instance {id}: {reason}")]
    Row { id: u32, reason: String },
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {0:?} is not scalar")]
    NotScalar(String),
    #[error("invalid hierarchy: {0}")]
    Hierarchy(String),
    #[error("no hierarchy range at path {0}")]
    NoSuchPath(String),
    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: &'static str, reason: String },
    #[error("group index {k} exceeds group count {n}")]
    GroupOutOfRange { k: usize, n: usize },
    #[error("failed to place primitive {index} after {attempts} attempts")]
    Placement { index: usize, attempts: usize },
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("stale buffer: epoch {got}, expected {expected}")]
    StaleEpoch { got: u64, expected: u64 },
    #[error("no dataset loaded")]
    NoDataset,
    #[error("image encoding failed: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            field,
            reason: reason.into(),
        }
    }
}
