use thiserror::Error;

use crate::graph::EntityId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no instances to score")]
    Empty,
    #[error("{predictions} predictions for {gold} gold answers")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("ranks start at 1, got {0}")]
    InvalidRank(usize),
    #[error("k must be at least 1")]
    InvalidK,
}

/// Candidates best first, with the 1-based rank of the gold entity when it
/// is among them.
#[derive(Debug, Clone, PartialEq)]
pub struct RankList {
    pub order: Vec<(EntityId, f64)>,
    pub gold_rank: Option<usize>,
}

impl RankList {
    /// Sort by descending score; equal scores go to the lower entity id.
    pub fn new(mut scores: Vec<(EntityId, f64)>, gold: Option<EntityId>) -> Self {
        scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let gold_rank = gold.and_then(|g| scores.iter().position(|(id, _)| *id == g)).map(|p| p + 1);
        RankList { order: scores, gold_rank }
    }
}

/// Exact-match fraction.
pub fn accuracy<T: PartialEq>(predictions: &[T], gold: &[T]) -> Result<f64, MetricError> {
    if predictions.len() != gold.len() {
        return Err(MetricError::LengthMismatch { predictions: predictions.len(), gold: gold.len() });
    }
    if gold.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

fn check_ranks(ranks: &[usize]) -> Result<(), MetricError> {
    if ranks.is_empty() {
        return Err(MetricError::Empty);
    }
    match ranks.iter().find(|&&r| r == 0) {
        Some(_) => Err(MetricError::InvalidRank(0)),
        None => Ok(()),
    }
}

/// Fraction of ranks at most `k`.
pub fn hits_at_k(ranks: &[usize], k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    check_ranks(ranks)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> Result<f64, MetricError> {
    check_ranks(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}
