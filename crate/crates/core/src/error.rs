use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed triple line (expected head<TAB>relation<TAB>tail)")]
    MalformedTriple { path: PathBuf, line: usize },

    #[error("unknown entity name: {0:?}")]
    UnknownEntity(String),

    #[error("unknown relation name: {0:?}")]
    UnknownRelation(String),

    #[error("entity id {id} out of range (vocabulary has {len} entities)")]
    EntityOutOfRange { id: u32, len: usize },

    #[error("relation name collision: {0:?} already taken by a synthesized inverse")]
    VocabCollision(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("task relation {relation:?} has {count} triples; at least 2 are required")]
    TooFewTriples { relation: String, count: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("vocabulary mismatch between checkpoint and dataset: {0}")]
    VocabMismatch(String),

    #[error("non-finite value in {context} at step {step}")]
    Divergence { context: String, step: u64 },

    #[error("task generation failed: {0}")]
    TaskGen(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by the CLI to pick an exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
