use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage an error was raised in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Caption,
    Generation,
    Embedding,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Caption => "caption",
            Stage::Generation => "generation",
            Stage::Embedding => "embedding",
        }
    }

    pub const ALL: [Stage; 3] = [Stage::Caption, Stage::Generation, Stage::Embedding];
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation precondition (length mismatch, empty input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input is well-formed but the statistic or metric is undefined on it.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("backend fault: {0}")]
    BackendFault(String),

    #[error("content policy refusal: {0}")]
    ContentPolicy(String),

    #[error("cache integrity error for {digest}: {reason}")]
    CacheIntegrity { digest: String, reason: String },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{stage} stage failed: {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            already @ Error::AtStage { .. } => already,
            other => Error::AtStage { stage, source: Box::new(other) },
        }
    }

    /// The innermost error, skipping stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_backend(&self) -> bool {
        matches!(
            self.root(),
            Error::Transport(_) | Error::BackendFault(_) | Error::ContentPolicy(_)
        )
    }

    pub fn is_cache_integrity(&self) -> bool {
        matches!(self.root(), Error::CacheIntegrity { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
