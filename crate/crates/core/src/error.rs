use umt_tensor::Error as TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{op}: expected length {expected}, got {actual}")]
    Length { op: &'static str, expected: usize, actual: usize },
    #[error("{op}: {msg}")]
    InvalidInput { op: &'static str, msg: String },
    #[error("sequence length {len} exceeds maximum {max}")]
    OverLength { len: usize, max: usize },
    #[error("decoder target must begin with BOS")]
    MissingBos,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("vocabulary hash mismatch: checkpoint {expected:#018x}, actual {actual:#018x}")]
    VocabHashMismatch { expected: u64, actual: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
