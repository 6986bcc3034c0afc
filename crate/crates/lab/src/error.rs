use std::path::{Path, PathBuf};

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] anclab_core::Error),
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
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing input {path}: run `anclab {producer}` first")]
    MissingInput { path: PathBuf, producer: &'static str },
    #[error("fingerprint mismatch for {what}: expected {expected}, found {found}")]
    Fingerprint {
        what: String,
        expected: String,
        found: String,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn wav(path: &Path, source: hound::Error) -> Self {
        Self::Wav {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            LabError::Core(
                anclab_core::Error::Diverged { .. }
                    | anclab_core::Error::NonFinite(_)
                    | anclab_core::Error::NonFiniteGradient(_)
                    | anclab_core::Error::NonFiniteUpdate(_)
            )
        )
    }

    /// 3 for numerical divergence, 1 for filesystem failures, 2 for
    /// everything the user can fix in the config or inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            e if e.is_divergence() => 3,
            LabError::Io { .. } => 1,
            _ => 2,
        }
    }
}
