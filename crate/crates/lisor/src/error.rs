use std::path::PathBuf;

/// Errors from reading or writing artifact files.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("unsupported version {found:?}, expected {expected:?}")]
    Version { expected: &'static str, found: String },
    #[error(transparent)]
    Core(#[from] lisor_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FormatError {
    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        FormatError::Field {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn json(line: usize, source: serde_json::Error) -> Self {
        FormatError::Json { line, source }
    }
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;
