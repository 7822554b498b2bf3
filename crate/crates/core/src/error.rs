use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mesh is not watertight: {0} open or non-manifold edges")]
    NotWatertight(usize),

    #[error("category mismatch: template `{0}` vs `{1}`")]
    CategoryMismatch(String, String),

    #[error("non-finite loss at initialization: {0}")]
    NonFinite(String),

    #[error("unrecognized object: best template loss {best:.5} exceeds ceiling {ceiling:.5}")]
    Unrecognized { best: f64, ceiling: f64 },

    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("schema mismatch: expected `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by bad user input (exit code 2 at the CLI).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Config(_)
                | Error::NotWatertight(_)
                | Error::Read { .. }
                | Error::Parse { .. }
                | Error::Schema { .. }
                | Error::CategoryMismatch(..)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
