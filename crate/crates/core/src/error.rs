use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("corrupt record {record}: {reason}")]
    CorruptRecord { record: usize, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("dimension {index} has zero mass (n = 0) but beta = {beta}")]
    DegenerateNode { index: usize, beta: f64 },

    #[error("dimension {index} is isolated (zero affinity row sum)")]
    IsolatedDimension { index: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("stale artifact {path}: expected hash {expected}, found {found}")]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
