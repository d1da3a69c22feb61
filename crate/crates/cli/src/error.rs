use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage} needs the outputs of {needs}; run `gnndm {needs}` first")]
    MissingDependency { stage: &'static str, needs: &'static str },

    #[error("{0}")]
    Core(#[from] gnndm::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Short machine-readable category for the stderr error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingDependency { .. } => "missing-dependency",
            CliError::Core(_) => "core",
            CliError::Io(_) => "io",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }

    /// One-line JSON object describing the failure.
    pub fn to_json_line(&self, stage: &str) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "stage": stage,
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}
