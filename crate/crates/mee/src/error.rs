use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated file, {detail}")]
    Truncated { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {source}")]
    JsonLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("sample {id}: {modality} rows {offset}..{end} outside stream of {rows} rows")]
    OffsetOutOfRange {
        id: String,
        modality: String,
        offset: u64,
        end: u64,
        rows: usize,
    },
    #[error("sample {id}: token id {token} outside vocabulary of {vocab}")]
    UnknownToken { id: String, token: u32, vocab: usize },
    #[error("sample {id}: {what}")]
    InvalidSample { id: String, what: String },
    #[error("{path}: {what}")]
    InvalidDataset { path: PathBuf, what: String },
    #[error("dataset lacks modality {0:?} required by the model")]
    MissingModality(String),
    #[error("dataset has no multiple-choice items")]
    NoMultipleChoice,
    #[error("checkpoint {path}: {what}")]
    Checkpoint { path: PathBuf, what: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: u64 },
    #[error("{failed} gradient slots exceed the tolerance")]
    GradcheckFailed { failed: usize },
    #[error(transparent)]
    Core(#[from] mee_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::Version { .. } => "version_mismatch",
            Error::Truncated { .. } => "truncated",
            Error::Json { .. } | Error::JsonLine { .. } => "json",
            Error::OffsetOutOfRange { .. } => "offset_out_of_range",
            Error::UnknownToken { .. } => "unknown_token",
            Error::InvalidSample { .. } => "invalid_sample",
            Error::InvalidDataset { .. } => "invalid_dataset",
            Error::MissingModality(_) => "missing_modality",
            Error::NoMultipleChoice => "no_multiple_choice",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Config(_) => "config",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::GradcheckFailed { .. } => "gradcheck_failed",
            Error::Core(_) => "model",
        }
    }
}

impl From<mee_core::TensorError> for Error {
    fn from(e: mee_core::TensorError) -> Self {
        Self::Core(e.into())
    }
}
