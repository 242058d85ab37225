use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("context is empty; at least one context token is required")]
    EmptyContext,

    #[error("token id {token} is outside the vocabulary (size {vocab_size})")]
    InvalidToken { token: u32, vocab_size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("vocabulary mismatch: expected {expected} entries, got {actual}")]
    VocabularyMismatch { expected: usize, actual: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("malformed replacement proposal: position {position} {reason}")]
    MalformedProposal {
        position: usize,
        reason: &'static str,
    },

    #[error("replacement strategy unavailable: {0}")]
    StrategyUnavailable(String),

    /// The backend produced no measurable change when the whole input was
    /// zeroed, so the normalised soft metrics are undefined at this position.
    #[error("degenerate zero-input baseline at target position {target_pos}")]
    DegenerateBaseline { target_pos: usize },

    #[error("random baseline value must be positive, got {0}")]
    DegenerateRandomBaseline(f64),

    #[error("no evaluable positions: all {skipped} positions had degenerate baselines")]
    EmptyReport { skipped: usize },

    #[error("brute-force occlusion is limited to {max} context tokens, got {len}")]
    OracleScale { len: usize, max: usize },

    #[error("backend returned an invalid response: {0}")]
    Backend(String),

    #[error("transport error after {attempts} attempt(s) (retryable: {retryable}): {message}")]
    Transport {
        message: String,
        retryable: bool,
        attempts: u32,
    },

    #[error("remote error (status {status}, retryable: {retryable}): {message}")]
    Remote {
        status: u16,
        message: String,
        retryable: bool,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that indicate the backend could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
