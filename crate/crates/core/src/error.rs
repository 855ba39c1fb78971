use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Relevance totals or logits that make a share or a heatmap undefined.
    #[error("degenerate explanation: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("bad magic in {path}: expected \"VXTC\"")]
    BadMagic { path: PathBuf },

    #[error("unsupported container version {found} in {path} (expected 1)")]
    UnsupportedVersion { path: PathBuf, found: u32 },

    #[error("truncated container {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("malformed manifest in {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
