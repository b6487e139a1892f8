use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("compute budget of {0:.1}s exceeded")]
    BudgetExceeded(f64),
    #[error("no results.json found under {0}")]
    MissingResults(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] clt_lab::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation { .. } => 2,
            Self::BudgetExceeded(_) | Self::Core(clt_lab::Error::BudgetExceeded(_)) => 3,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Validation { .. } => "validation",
            Self::BudgetExceeded(_) | Self::Core(clt_lab::Error::BudgetExceeded(_)) => "budget_exceeded",
            Self::MissingResults(_) => "missing_results",
            Self::Io { .. } => "io",
            Self::Core(_) => "computation",
            Self::Other(_) => "error",
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() });
        if let Self::Validation { field, .. } = self {
            v["field"] = json!(field);
        }
        v.to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;
