use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),

    #[error("cannot split {nodes} nodes into {parts} shards")]
    TooManyParts { nodes: usize, parts: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {token} out of range (max {max})")]
    TokenOutOfRange { token: u32, max: u32 },

    #[error("row {0} has zero norm")]
    ZeroNorm(usize),

    #[error("all client degrees are zero")]
    DegenerateDegrees,

    #[error("history pool is empty")]
    EmptyPool,

    #[error("class {0} has no labeled nodes")]
    EmptyClass(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed payload: {0}")]
    Payload(String),

    #[error("{module} failed in round {round}: {source}")]
    Round {
        module: &'static str,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_round(self, module: &'static str, round: usize) -> Self {
        Error::Round {
            module,
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
