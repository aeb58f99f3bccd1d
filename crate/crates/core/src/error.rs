use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two grids that must share a shape did not.
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: [usize; 3], right: [usize; 3] },

    /// Phantom placement could not satisfy its constraints.
    #[error("phantom generation failed for field `{field}`: {reason}")]
    Generation { field: &'static str, reason: String },

    /// A network input had the wrong shape.
    #[error("shape error in {pathway} pathway: {reason}")]
    Shape { pathway: String, reason: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {components}")]
    Diverged { epoch: usize, components: String },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("truncated file {path}: expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("malformed header in {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("dtype {dtype} is incompatible with kind {kind} in {path}")]
    KindMismatch {
        path: PathBuf,
        dtype: String,
        kind: String,
    },

    #[error("invalid voxel data in {path}: {reason}")]
    Validation { path: PathBuf, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed user data (files, specs, arguments)
    /// rather than by a bug.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Internal(_) | Error::Diverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
