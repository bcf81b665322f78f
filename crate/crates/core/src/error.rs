use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter window required for a reconstruction formula to hold is violated.
    /// The message states the condition being enforced.
    #[error("validity window violated: {0}")]
    Validity(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("floating-point overflow: {0}")]
    Overflow(String),

    #[error("ill-conditioned problem: {0}")]
    IllConditioned(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    /// An internal consistency assertion (e.g. a density that should be real is not).
    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Validity(_) => "validity",
            Error::Precondition(_) => "precondition",
            Error::Overflow(_) => "overflow",
            Error::IllConditioned(_) => "ill-conditioned",
            Error::Convergence(_) => "convergence",
            Error::Consistency(_) => "consistency",
            Error::Schema(_) => "schema",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
