use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto exit codes, so new
/// variants must pick a lane: config problems, missing/broken inputs, or
/// numeric divergence.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: unknown keys, out-of-range values, malformed JSON.
    #[error("config error: {0}")]
    Config(String),

    /// A required input artifact is missing or incompatible (absent base
    /// checkpoint, dataset digest mismatch, truncated file).
    #[error("dependency error: {0}")]
    Dependency(String),

    /// Training produced non-finite losses or parameters.
    #[error("numeric divergence: {0}")]
    Numeric(String),

    /// An API contract was violated in a way worth reporting instead of
    /// panicking (e.g. env reset could not satisfy scene constraints).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Degenerate geometric input (zero-norm rotation representation).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dependency(_) => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        }
    }
}
