use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x:.6}, {y:.6}) lies outside the extended chart of radius {limit:.6}")]
    Domain { x: f64, y: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("unrecoverable: {0}")]
    Unrecoverable(String),

    #[error("hypothesis violated: {0}")]
    ViolatedHypothesis(String),

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("visibility: {0}")]
    Visibility(String),

    #[error("degenerate directions: {0}")]
    DegenerateDirections(String),

    #[error("map is not a diffeomorphism: {0}")]
    NonDiffeo(String),

    #[error("integral undefined: {0}")]
    UndefinedIntegral(String),

    #[error("empty system: {0}")]
    EmptySystem(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
