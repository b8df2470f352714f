use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Core(#[from] mvdr::Error),

    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    /// Ingestion problems, one entry per offending row or day.
    #[error("rejected input ({} problems): {}", .0.len(), .0.join("; "))]
    Rejected(Vec<String>),

    #[error("insufficient history: {0}")]
    History(String),

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("model {model} failed: {reason}")]
    Model { model: String, reason: String },
}

impl StudyError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        StudyError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Short machine-readable category for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            StudyError::Core(_) => "core",
            StudyError::Io { .. } => "io",
            StudyError::Csv(_) => "csv",
            StudyError::Json(_) => "json",
            StudyError::Config(_) => "config",
            StudyError::Rejected(_) => "rejected_input",
            StudyError::History(_) => "history",
            StudyError::UnknownModel(_) => "unknown_model",
            StudyError::Model { .. } => "model",
        }
    }
}

pub type Result<T> = std::result::Result<T, StudyError>;
