use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label {0} not present on operand")]
    MissingLabel(String),

    #[error("dimension mismatch on {label}: {left} vs {right}")]
    DimensionMismatch {
        label: String,
        left: usize,
        right: usize,
    },

    #[error("multiplicity {requested} of {label} exceeds {available} available occurrences")]
    MultiplicityExceeded {
        label: String,
        requested: usize,
        available: usize,
    },

    #[error("rank deficient: need rank {required}, singular values {singular_values:?}")]
    RankDeficient {
        required: usize,
        singular_values: Vec<f64>,
    },

    #[error("requested rank {rank} exceeds matrix dimensions {rows}x{cols}")]
    RankTooLarge { rank: usize, rows: usize, cols: usize },

    #[error("state index {index} out of range for {label} with cardinality {cardinality}")]
    IndexOutOfRange {
        label: String,
        index: usize,
        cardinality: usize,
    },

    #[error("invalid multiplicity for {0}")]
    InvalidMultiplicity(String),

    #[error("malformed tensor: {0}")]
    Malformed(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("unknown variable {0}")]
    UnknownVariable(String),

    #[error("assignment does not cover observed variable {0}")]
    IncompleteAssignment(String),

    #[error("hidden state space of {0} configurations exceeds the enumeration limit")]
    StateSpaceTooLarge(u128),

    #[error("empty sample set")]
    EmptySamples,

    #[error("anchor planning failed at node {node}: {reason}")]
    Planning { node: usize, reason: String },

    #[error("inversion failed at node {node} (anchor set {anchors:?}): {source}")]
    NodeInversion {
        node: usize,
        anchors: Vec<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
