use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: operand has zero norm (degenerate embedding)")]
    ZeroNorm { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("missing gradient for parameter {0}")]
    MissingGradient(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{stage} diverged at epoch {epoch}: non-finite loss {loss} (learning rate too high?)")]
    Diverged {
        stage: &'static str,
        epoch: usize,
        loss: f64,
    },

    #[error("all {restarts} latent search restarts failed: {reason}")]
    AllRestartsFailed { restarts: usize, reason: String },

    #[error("unknown domain id {0}")]
    UnknownDomain(usize),

    #[error("too few samples: {what} needs at least {min}, got {got}")]
    TooFewSamples { what: &'static str, min: usize, got: usize },

    #[error("expected binary labels, got {0} classes")]
    NonBinary(usize),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
