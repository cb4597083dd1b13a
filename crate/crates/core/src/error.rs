use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("epoch too short: {samples} samples but one window needs {window}")]
    EpochTooShort { samples: usize, window: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar((usize, usize)),

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty decision ensemble")]
    EmptyEnsemble,

    #[error(
        "recording has {epochs} epochs, shorter than the sequence length {seq_len}; \
         use a smaller sequence length"
    )]
    RecordingTooShort { epochs: usize, seq_len: usize },

    #[error("bad magic: expected \"SSR1\"")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("label out of range: {0}")]
    LabelOutOfRange(u8),

    #[error("label sidecar has {found} labels for {expected} epochs")]
    LabelCount { expected: usize, found: usize },

    #[error("{0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for data problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 3,
            Error::InvalidConfig(_) => 1,
            _ => 2,
        }
    }
}
