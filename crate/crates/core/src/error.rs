use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid world state: {0}")]
    InvalidWorld(String),

    #[error("invalid action {action} at tick {tick}")]
    InvalidAction { action: String, tick: u32 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("observation has zero likelihood under every particle at tick {tick}")]
    ZeroLikelihood { tick: u32 },

    #[error("no recorded spacebar press at tick {0}")]
    UnknownPress(u32),

    #[error("malformed trace record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },

    #[error("trial aborted: {0}")]
    Aborted(String),

    #[error("trace carries no ground-truth labels: {0}")]
    MissingTruth(String),

    #[error("{} trial(s) failed: {}", failed.len(), failed.join(", "))]
    PartialBatch { failed: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code, used in CLI and wire error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            Error::OutOfRange(_) => "out_of_range",
            Error::InvalidWorld(_) => "invalid_world",
            Error::InvalidAction { .. } => "invalid_action",
            Error::InvalidParams(_) => "invalid_params",
            Error::ZeroLikelihood { .. } => "zero_likelihood",
            Error::UnknownPress(_) => "unknown_press",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::Aborted(_) => "aborted",
            Error::MissingTruth(_) => "missing_truth",
            Error::PartialBatch { .. } => "partial_batch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
