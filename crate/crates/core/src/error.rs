use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in layer `{layer}` at timestep {timestep}")]
    Numeric { layer: String, timestep: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("build error in layer `{layer}`: {message}")]
    Build { layer: String, message: String },

    #[error("missing profile fields: {}", .0.join(", "))]
    MissingFields(Vec<String>),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shapes(what: &str, a: &[usize], b: &[usize]) -> Self {
        Error::Dimension(format!("{what}: {a:?} vs {b:?}"))
    }
}
