use thiserror::Error;

/// Errors surfaced by the solvers, estimators and configuration layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),

    #[error("point is {distance:.3e} from the boundary, outside the snap band {r_snap:.3e}")]
    OutOfBand { distance: f64, r_snap: f64 },

    #[error("domain misuse: {0}")]
    DomainMisuse(String),

    #[error("medium does not provide {0}")]
    UnsupportedCapability(String),

    #[error("numerical failure on path {path_id}: {reason}")]
    NumericalFailure { path_id: u64, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("linear solver: {0}")]
    Solver(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Precondition(_) => 2,
            _ => 3,
        }
    }

    /// Short machine-readable tag written into error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedQuery(_) => "unsupported_query",
            Error::OutOfBand { .. } => "out_of_band",
            Error::DomainMisuse(_) => "domain_misuse",
            Error::UnsupportedCapability(_) => "unsupported_capability",
            Error::NumericalFailure { .. } => "numerical_failure",
            Error::Precondition(_) => "precondition",
            Error::Data(_) => "data",
            Error::Solver(_) => "solver",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
