//! Corpora, the two training stages, evaluation metrics and the ablation
//! harness.

mod ablation;
mod corpus;
mod eval;
mod examples;
mod metrics;
pub mod synthetic;
mod trainer;

use std::path::PathBuf;

use thiserror::Error;

pub use ablation::{row_config, run_ablation, AblationReport, AblationRow, ROW_NAMES};
pub use corpus::{parse_corpus, parse_instance, write_corpus, write_instance, Dataset, Instance, Target};
pub use eval::{evaluate, exact_match_accuracy, parse_ranks, EvalReport, RankingMetrics, HITS_AT};
pub use examples::{embedding_stores, extend_vocab, prepare, register_relations, Example};
pub use metrics::{accuracy, hits_at_k, mrr, MetricError, RankList};
pub use trainer::{
    epoch_means, finetune, fit, init_model, pretrain, pretrain_from, warm_start, write_loss_log, Continue, LossRecord,
    Stage, TrainConfig, TrainRun, LOSS_LOG_HEADER,
};

use crate::embedding::EmbeddingError;
use crate::graph::GraphError;
use crate::model::ModelError;
use crate::nn::NnError;
use crate::retrieval::RetrievalError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("{0}")]
    Data(String),
    #[error("instance {index}: {source}")]
    Instance { index: usize, source: Box<TrainError> },
    #[error("{}: {source}", path.display())]
    Graph { path: PathBuf, source: GraphError },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    CheckpointNames(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<RetrievalError> for TrainError {
    fn from(e: RetrievalError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<EmbeddingError> for TrainError {
    fn from(e: EmbeddingError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<GraphError> for TrainError {
    fn from(e: GraphError) -> Self {
        TrainError::Model(e.into())
    }
}
