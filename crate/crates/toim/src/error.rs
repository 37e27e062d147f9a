use thiserror::Error;

/// Errors surfaced by the modeling pipeline.
#[derive(Debug, Error)]
pub enum ToimError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("duplicate message id {id}")]
    DuplicateMessage { id: String },

    #[error("dangling parent {parent} referenced by message {id}")]
    DanglingParent { id: String, parent: String },

    #[error("message {id}: {reason}")]
    InvalidMessage { id: String, reason: String },

    #[error("unknown user index {0}")]
    UnknownUser(usize),

    #[error("unknown noun index {0}")]
    UnknownNoun(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty graph")]
    EmptyGraph,

    #[error("all-zero weight vector")]
    ZeroWeights,

    #[error("no topic-opinion neighbors for user {user} on topic {topic}")]
    NoNeighbors { user: String, topic: usize },

    #[error("adjacency row {0} cannot be normalized")]
    BadAdjacencyRow(usize),

    #[error("overlapping pair key ({0}, {1}) across ledger fragments")]
    OverlappingFragments(String, String),

    #[error("empty gold label set")]
    EmptyGold,

    #[error("{0}")]
    Other(String),
}

impl ToimError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        ToimError::Io {
            path: path.into(),
            source,
        }
    }
}
