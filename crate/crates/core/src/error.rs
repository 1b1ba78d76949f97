use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular matrix: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("instance generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operation `{operation}` is not supported for the {family} family")]
    UnsupportedFamily {
        operation: &'static str,
        family: &'static str,
    },

    #[error("algorithm requires homogeneous environments (delta_env_param = {0})")]
    HeterogeneousEnvironment(f64),

    #[error("density ratios are unavailable for agent {agent}")]
    MissingDensityRatio { agent: usize },

    #[error("theory step size needs a horizon of at least 2 rounds, got {0}")]
    InvalidHorizon(f64),

    #[error("cannot average an empty trajectory")]
    EmptyTrajectory,

    #[error("seed {seed}: {source}")]
    Seeded {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// True for problems with the user's input rather than with a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_)
            | Error::Parse { .. }
            | Error::HeterogeneousEnvironment(_)
            | Error::UnsupportedFamily { .. }
            | Error::InvalidHorizon(_) => true,
            Error::Seeded { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn with_seed(self, seed: u64) -> Self {
        match self {
            already @ Error::Seeded { .. } => already,
            other => Error::Seeded {
                seed,
                source: Box::new(other),
            },
        }
    }
}
