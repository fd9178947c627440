use thiserror::Error;

use crate::chemgraph::MolGraph;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("SMILES parse error at position {pos}: {cause}")]
    Parse { pos: usize, cause: String },

    #[error("valence violation on atom {atom} ({element}): bond order sum {sum} exceeds {max}")]
    Valence {
        atom: usize,
        element: &'static str,
        sum: u32,
        max: u32,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("stale deletion: {0}")]
    StaleDeletion(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("node has no legal deletions")]
    NoLegalAction,

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training data must contain both classes")]
    SingleClass,

    #[error("fingerprint width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("graph does not contain the rationale as an induced subgraph")]
    Containment,

    #[error("completion truncated after {steps} added atoms")]
    Truncated {
        steps: usize,
        partial: Box<MolGraph>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
