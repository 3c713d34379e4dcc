use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("dialogue `{dialogue_id}` rejected: {}", .issues.join("; "))]
    Rejected { dialogue_id: String, issues: Vec<String> },

    #[error("utterance {index} has zero duration")]
    DegenerateDuration { index: usize },

    #[error("fusion failed: {0}")]
    Fusion(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("effect precedes cause (delta_t = {delta_t})")]
    PrecedenceViolation { delta_t: f64 },

    #[error("transport error: {message}")]
    Transport {
        message: String,
        retry_after_ms: Option<u64>,
    },

    #[error("could not parse provider response: {message}")]
    ProviderResponse { message: String, raw: String },

    #[error("provider `{provider}` failed: {message}")]
    Provider { provider: String, message: String },

    #[error("indexing failed at window {window_index}: {source}")]
    Indexing {
        window_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("scoring pair {cause} -> {effect} failed: {source}")]
    PairScoring {
        cause: String,
        effect: String,
        #[source]
        source: Box<Error>,
    },

    #[error("knowledge base format error: {0}")]
    Format(String),

    #[error("unsupported knowledge base version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch in {section} section")]
    Checksum { section: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Transport failures are the only retryable class.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }

    pub(crate) fn json(err: &serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
