//! Error type shared across the pipeline.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, AstraError>;

#[derive(Debug, thiserror::Error)]
pub enum AstraError {
    /// A caller violated an operation precondition (index range, shape, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Configuration values are inconsistent or out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A manifest or payload file does not match its declared layout.
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),

    /// A requested clip window lies outside the timeline.
    #[error("window out of range: {0}")]
    WindowRange(String),

    /// An unknown strategy name was requested from a registry.
    #[error("unknown {family} strategy {name:?}; known: {known:?}")]
    UnknownStrategy {
        family: &'static str,
        name: String,
        known: Vec<String>,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: l_c={l_c}, l_d={l_d}")]
    TrainingDiverged { step: u64, l_c: f64, l_d: f64 },

    /// Checkpoint bytes do not parse as the expected archive layout.
    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl AstraError {
    pub fn contract(msg: impl Into<String>) -> Self {
        AstraError::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        AstraError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AstraError::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        AstraError::Json { path: path.into(), source }
    }
}
