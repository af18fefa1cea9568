use alloc::string::String;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("empty input sequence: {0}")]
    EmptySequence(&'static str),
    #[error("sample `{0}` has no available modality")]
    NoAvailableModality(String),
    #[error("sample `{id}`: stream for `{modality}` is {got}-dimensional, expected {expected}")]
    StreamDim {
        id: String,
        modality: String,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} streams, sample `{id}` has {got}")]
    StreamCount {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("caption word vectors are {got}-dimensional, expected {expected}")]
    CaptionDim { expected: usize, got: usize },
    #[error("batch mismatch: {captions} captions vs {videos} videos")]
    BatchMismatch { captions: usize, videos: usize },
    #[error("similarity matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("ground-truth index {index} out of range for {candidates} candidates")]
    IndexOutOfRange { index: usize, candidates: usize },
    #[error("multiple-choice item has {0} candidates, expected 5")]
    CandidateCount(usize),
    #[error("evaluation pool of {requested} exceeds {available} available pairs")]
    PoolTooLarge { requested: usize, available: usize },
    #[error("empty evaluation pool")]
    EmptyPool,
    #[error("sampling rate alpha > 0 requires a non-empty image source")]
    EmptyImageSource,
    #[error("missing rate for `{0}` must lie in [0, 1]")]
    InvalidRate(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
}
