//! The knowledge-augmented reasoning model: a frozen toy language backbone,
//! a visual adapter, a graph encoder with a knowledge adapter, and the
//! alignment and generation objectives.

mod backbone;
mod config;
mod knowledge;
mod mrmkg;
pub mod selfcheck;
mod vocab;

pub use config::{KgQuery, ModelConfig};
pub use knowledge::{retrieve_knowledge, KnowledgeGraph};
pub use mrmkg::{assemble_prompt, total_loss, Alignment, LossParts, Model, PreparedInstance, Prompt};
pub use vocab::{Vocab, EOS, UNK};

use thiserror::Error;

use crate::embedding::EmbeddingError;
use crate::graph::{EntityId, GraphError};
use crate::nn::NnError;
use crate::retrieval::RetrievalError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid vocabulary file: {0}")]
    InvalidVocab(String),
    #[error("vocabulary needs {needed} tokens but the model has {capacity}")]
    VocabOverflow { needed: usize, capacity: usize },
    #[error("retrieval returned an empty subgraph")]
    EmptySubgraph,
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("answer has no tokens")]
    InvalidAnswer,
    #[error("answer has {len} tokens, limit is {max}")]
    AnswerTooLong { len: usize, max: usize },
    #[error("ranking needs at least one candidate")]
    EmptyCandidates,
    #[error("alignment needs at least two text entities, subgraph has {0}")]
    InsufficientTextEntities(usize),
    #[error("{section} section has width {found}, expected {expected}")]
    WidthMismatch { section: &'static str, expected: usize, found: usize },
    #[error("candidate entity {0} is not in the instance graph")]
    UnknownCandidate(EntityId),
}
