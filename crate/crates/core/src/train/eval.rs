use std::fmt::Write as _;

use super::{accuracy, hits_at_k, mrr, Example, TrainError};
use crate::model::Model;
use crate::textfmt::fixed;

pub const HITS_AT: [usize; 4] = [1, 3, 5, 10];

/// Ranking metrics over instances that have candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub ranks: Vec<usize>,
    pub hits: Vec<(usize, f64)>,
    pub mrr: f64,
}

impl RankingMetrics {
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self, TrainError> {
        let hits = HITS_AT.iter().map(|&k| Ok((k, hits_at_k(&ranks, k)?))).collect::<Result<Vec<_>, TrainError>>()?;
        let mrr = mrr(&ranks)?;
        Ok(RankingMetrics { ranks, hits, mrr })
    }

    /// Header line and value line, tab-separated, six decimals.
    pub fn table(&self) -> String {
        let mut header = Vec::new();
        let mut values = Vec::new();
        for (k, h) in &self.hits {
            header.push(format!("Hits@{k}"));
            values.push(fixed(*h, 6));
        }
        header.push("MRR".into());
        values.push(fixed(self.mrr, 6));
        format!("{}\n{}\n", header.join("\t"), values.join("\t"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub instances: usize,
    /// Top candidate is gold where there are candidates; greedy exact match
    /// elsewhere.
    pub accuracy: f64,
    pub ranking: Option<RankingMetrics>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "instances\t{}", self.instances);
        let _ = writeln!(out, "accuracy\t{}", fixed(self.accuracy, 6));
        if let Some(r) = &self.ranking {
            out.push_str(&r.table());
        }
        out
    }
}

/// Greedy exact-match accuracy, ignoring candidates.
pub fn exact_match_accuracy(model: &Model, examples: &[Example]) -> Result<f64, TrainError> {
    let predictions = examples.iter().map(|e| model.greedy_decode(&e.input)).collect::<Result<Vec<_>, _>>()?;
    let gold: Vec<Vec<usize>> = examples.iter().map(|e| e.input.answer.clone()).collect();
    Ok(accuracy(&predictions, &gold)?)
}

pub fn evaluate(model: &Model, examples: &[Example]) -> Result<EvalReport, TrainError> {
    let mut correct = Vec::with_capacity(examples.len());
    let mut ranks = Vec::new();
    for e in examples {
        if e.candidates.is_empty() {
            correct.push(model.greedy_decode(&e.input)? == e.input.answer);
            continue;
        }
        let list = model.rank_candidates(&e.input, &e.candidates, e.gold)?;
        let rank = list.gold_rank.ok_or_else(|| TrainError::Data("gold entity is not among the candidates".into()))?;
        correct.push(rank == 1);
        ranks.push(rank);
    }
    let acc = accuracy(&correct, &vec![true; correct.len()])?;
    let ranking = if ranks.is_empty() { None } else { Some(RankingMetrics::from_ranks(ranks)?) };
    Ok(EvalReport { instances: examples.len(), accuracy: acc, ranking })
}

/// Positive integer ranks separated by whitespace or newlines.
pub fn parse_ranks(text: &str) -> Result<Vec<usize>, TrainError> {
    let mut ranks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for t in line.split_whitespace() {
            match t.parse::<usize>() {
                Ok(r) if r >= 1 => ranks.push(r),
                _ => return Err(TrainError::Data(format!("rank file line {}: bad rank {t:?}", i + 1))),
            }
        }
    }
    Ok(ranks)
}
