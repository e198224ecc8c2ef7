use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0} contains non-finite entries")]
    NonFinite(&'static str),

    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("matrix is not Schur stable (spectral radius {spectral_radius})")]
    UnstableMatrix { spectral_radius: f64 },

    #[error("iteration did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("ill-conditioned system matrix (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("state diverged at step {k} (norm {norm:e})")]
    DivergedState { k: u64, norm: f64 },

    #[error("incomplete trial log: {0}")]
    IncompleteLog(String),

    #[error("no usable points in the fitting window")]
    EmptyWindow,

    #[error("stand-in plant generation failed after {attempts} attempts")]
    GenerationFailed { attempts: u32 },

    #[error("invalid config at {path}: {message}")]
    ConfigInvalid { path: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
