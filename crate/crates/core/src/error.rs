use std::path::PathBuf;

use thiserror::Error;

use crate::admm::AdmmState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid parameter `{name}`: {detail}")]
    Param { name: &'static str, detail: String },

    #[error("invalid convolution geometry: {0}")]
    Geometry(String),

    #[error("malformed array file {path}: {detail}")]
    MalformedArray { path: PathBuf, detail: String },

    #[error("array file {path} has {found}, expected {expected}")]
    ArrayMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal {off_diagonal:e})")]
    SvdNoConvergence { sweeps: usize, off_diagonal: f64 },

    #[error("inner solver diverged at epoch {epoch}: objective trace {trace:?}")]
    Divergence { epoch: usize, trace: Vec<f64> },

    #[error("non-finite iterate at ADMM iteration {iteration}")]
    NonFinite { iteration: usize, state: Box<AdmmState> },

    #[error("format version mismatch: file is version {found}, reader supports version {expected}")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("compressed output diverges from dense baseline by {divergence:e} (bound {bound:e})")]
    Correctness { divergence: f64, bound: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Param {
            name,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SvdNoConvergence { .. }
                | Error::Divergence { .. }
                | Error::NonFinite { .. }
                | Error::Correctness { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedArray { .. }
                | Error::ArrayMismatch { .. }
                | Error::VersionMismatch { .. }
                | Error::Corrupt(_)
        )
    }
}
