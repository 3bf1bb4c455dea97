use crate::tensor::Shape;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty neighborhood")]
    EmptyNeighborhood,

    #[error("node {0} has an empty neighborhood")]
    IsolatedNode(usize),

    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("record {id}: missing or malformed field `{field}`")]
    MissingField { id: String, field: String },

    #[error("record {id}: no paragraphs")]
    NoParagraphs { id: String },

    #[error("unknown question type `{0}`")]
    UnknownQuestionType(String),

    #[error("vocabulary too small: need at least {need} words, have {have}")]
    VocabTooSmall { need: usize, have: usize },

    #[error("empty paragraph selection")]
    EmptySelection,

    #[error("empty context")]
    EmptyContext,

    #[error("node {0} has an empty token span")]
    EmptySpan(usize),

    #[error("gold span ({start}, {end}) outside context of {len} tokens")]
    SpanOutOfContext { start: usize, end: usize, len: usize },

    #[error("output layout does not match graph: {0}")]
    Layout(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
