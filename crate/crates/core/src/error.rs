use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),

    #[error("cube with corner {corner:?} and side {side} is not a cube of the grid")]
    NotInGrid { corner: Vec<f64>, side: f64 },

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("integrand returned a non-finite value at y = {y:?}, t = {t}")]
    NonFinite { y: Vec<f64>, t: f64 },

    #[error("{what} has {count} atoms, above the cap of {cap}")]
    TooLarge {
        what: &'static str,
        count: usize,
        cap: usize,
    },

    #[error("invalid dictionary member `{name}`: {reason}")]
    InvalidDictionary { name: String, reason: String },

    #[error("unknown check id `{id}`; valid ids: {valid}")]
    UnknownCheck { id: String, valid: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("cannot read `{path}`", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
