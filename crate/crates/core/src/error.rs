use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("timestamp {given} precedes log head {head} in conversation {conversation_id}")]
    TimestampRegression {
        conversation_id: String,
        given: String,
        head: String,
    },

    #[error("storage failure: {0}")]
    StorageFailure(String),

    #[error("range [{start}, {end}] out of bounds for log of length {len}")]
    RangeOutOfBounds { start: u64, end: u64, len: u64 },

    #[error("caption already set on message {0}")]
    CaptionAlreadySet(u64),

    #[error("message {0} carries no image content")]
    NoImageContent(u64),

    #[error("unknown message {0}")]
    UnknownMessage(u64),

    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),

    #[error("invalid entry: {0}")]
    InvalidEntry(String),

    #[error("embedding failed: {0}")]
    EmbedFailure(String),

    #[error("unknown entry {0}")]
    UnknownEntry(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("empty input")]
    EmptyInput,

    #[error("image unreadable: {0}")]
    ImageUnreadable(String),

    #[error("transport error: {0}")]
    TransportError(String),

    #[error("malformed tool arguments: {0}")]
    MalformedToolArguments(String),

    #[error("context overflow: {0}")]
    ContextOverflow(String),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("insufficient catalog: {0}")]
    InsufficientCatalog(String),

    #[error("generated bundle invalid: {}", .0.join("; "))]
    GenerationInvalid(Vec<String>),

    #[error("degenerate time window: start {start} is not before end {end}")]
    DegenerateWindow { start: String, end: String },

    #[error("missing verdicts: {0}")]
    MissingVerdicts(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("config error: {0}")]
    Config(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::StorageFailure(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::StorageFailure(format!("json: {err}"))
    }
}
