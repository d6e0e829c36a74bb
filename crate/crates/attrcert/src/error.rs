use thiserror::Error;

/// Crate-wide error type.
///
/// `Structural` covers malformed inputs (shape mismatches, empty datasets,
/// bad files); `Domain` covers arguments outside an operation's mathematical
/// domain (e.g. `p < 1` norms, zero-vector cosine); `Numerical` covers
/// run-time numeric failures such as NaN losses.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural: {0}")]
    Structural(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
