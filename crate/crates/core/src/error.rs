use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate edge `{child}` -> `{parent}` on line {line}")]
    DuplicateEdge {
        child: String,
        parent: String,
        line: usize,
    },

    #[error("node `{child}` has two parents: `{first}` and `{second}` (line {line})")]
    MultipleParents {
        child: String,
        first: String,
        second: String,
        line: usize,
    },

    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("graph already has a dummy root")]
    DummyRootPresent,

    #[error("graph has no dummy root")]
    DummyRootMissing,

    #[error("nodes `{0}` and `{1}` are disconnected")]
    Disconnected(String, String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("label `{label}` already exists as node {id}")]
    DuplicateLabel { label: String, id: u32 },

    #[error("graph has no leaves")]
    NoLeaves,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("full loss enumeration needs |V| <= {limit}, got {nodes}; use the sampled loss")]
    TooLarge { nodes: usize, limit: usize },

    #[error("cannot sample {requested} negatives for `{child}`: only {available} eligible")]
    TooFewNegatives {
        child: String,
        requested: usize,
        available: usize,
    },

    #[error("no nodes at distance {distance} from `{node}`")]
    EmptyRing { node: String, distance: u32 },

    #[error("session: {0}")]
    Session(#[from] crate::service::SessionError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}
