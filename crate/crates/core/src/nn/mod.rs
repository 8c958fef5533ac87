//! Dense f64 tensors, a reverse-mode tape, and the layers and optimizer the
//! model needs.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{
    load_checkpoint, load_optimizer, merge_into, parse_checkpoint, parse_optimizer, save_checkpoint,
    save_optimizer, write_checkpoint, write_optimizer,
};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use layers::{linear, scaled_attention, triplet_loss, GraphAdjacency, GraphLayer, GraphLayerKind, GraphParams};
pub use optim::{AdamW, AdamWConfig, Moments};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{concat_rows, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("loss must have one element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("attention over an empty key set")]
    EmptyKeySet,
    #[error("optimizer state mismatch: {0}")]
    StateMismatch(String),
    #[error("checkpoint parameter {name:?} has shape {found:?}, model expects {expected:?}")]
    CheckpointMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed file: {0}")]
    Format(String),
}

impl From<std::io::Error> for NnError {
    fn from(e: std::io::Error) -> Self {
        NnError::Io(e.to_string())
    }
}
