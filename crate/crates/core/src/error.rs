use std::path::PathBuf;

/// Every failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported language `{0}`")]
    UnsupportedLanguage(String),
    #[error("source is not readable: {0}")]
    UnreadableSource(String),
    #[error("program has no tokens after filtering")]
    EmptyProgram,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every position of row {0} is masked")]
    AllMasked(usize),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("no graph recorded for backward")]
    NoGraphRecorded,
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("model is not loaded")]
    UnloadedModel,
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    DivergedTraining { epoch: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("program has fewer than two identifier occurrences")]
    InsufficientIdentifiers,
    #[error("missing checkpoint at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
