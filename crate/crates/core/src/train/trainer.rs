use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::{prepare, register_relations, Dataset, Example, TrainError};
use crate::model::{Model, ModelConfig, Vocab};
use crate::nn::{merge_into, AdamW, AdamWConfig, ParamStore, Tape};
use crate::retrieval::RetrievalConfig;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Zero epochs leaves the parameters untouched.
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Instances per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub seed: u64,
    pub retrieval: RetrievalConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            epochs: 3,
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 1,
            seed: 0,
            retrieval: RetrievalConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be a finite non-negative number");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be a finite non-negative number");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        self.retrieval.validate()?;
        self.model.validate()?;
        Ok(())
    }

    fn optimizer(&self) -> AdamW {
        AdamW::new(AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() })
    }
}

/// Mean losses of one optimizer step. `step` counts from 1 across epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub generation: f64,
    pub alignment: f64,
}

pub const LOSS_LOG_HEADER: &str = "epoch\tstep\tloss\tL_g\tL_a";

/// Tab-separated log with a header line. Values use the shortest form that
/// parses back to the same `f64`.
pub fn write_loss_log(records: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.epoch, r.step, r.loss, r.generation, r.alignment);
    }
    out
}

/// Mean loss of each epoch, in epoch order.
pub fn epoch_means(records: &[LossRecord]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in records {
        if out.len() < r.epoch {
            out.resize(r.epoch, (0.0, 0));
        }
        let slot = &mut out[r.epoch - 1];
        slot.0 += r.loss;
        slot.1 += 1;
    }
    out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

/// What to do after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Continue {
    Yes,
    Stop,
}

/// Run `config.epochs` epochs over `examples`. The order is reshuffled each
/// epoch from the seed; `after_epoch` sees the 1-based epoch number.
pub fn fit(
    model: &mut Model,
    examples: &[Example],
    config: &TrainConfig,
    optimizer: &mut AdamW,
    mut after_epoch: impl FnMut(usize, &Model) -> Result<Continue, TrainError>,
) -> Result<Vec<LossRecord>, TrainError> {
    config.validate()?;
    let mut log = Vec::new();
    if examples.is_empty() {
        return Ok(log);
    }
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut stream(config.seed, &[2, epoch as u64]));
        for batch in order.chunks(config.batch_size) {
            step += 1;
            model.params.zero_grad();
            let (mut loss, mut generation, mut alignment) = (0.0, 0.0, 0.0);
            for (k, &i) in batch.iter().enumerate() {
                let sample_seed = derive_seed(config.seed, &[3, epoch as u64, step as u64, k as u64]);
                let tape = Tape::new();
                let parts = model.forward(&tape, &examples[i].input, sample_seed)?;
                let total = parts.total.item();
                if !total.is_finite() {
                    return Err(TrainError::NonFinite { epoch, step });
                }
                loss += total;
                generation += parts.generation.item();
                alignment += parts.alignment.item();
                tape.backward(parts.total)?.accumulate_into(&mut model.params);
            }
            let n = batch.len() as f64;
            if batch.len() > 1 {
                for p in model.params.iter_mut().filter(|p| !p.frozen) {
                    p.grad.data_mut().iter_mut().for_each(|g| *g /= n);
                }
            }
            optimizer.step(&mut model.params)?;
            log.push(LossRecord { epoch, step, loss: loss / n, generation: generation / n, alignment: alignment / n });
        }
        if after_epoch(epoch, model)? == Continue::Stop {
            break;
        }
    }
    model.params.zero_grad();
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub model: Model,
    pub log: Vec<LossRecord>,
    pub optimizer: AdamW,
}

/// Fresh parameters from `seed` with relation embeddings for every graph of
/// `datasets`.
pub fn init_model(config: &ModelConfig, seed: u64, datasets: &[&Dataset]) -> Result<Model, TrainError> {
    let mut model = Model::new(*config, seed)?;
    register_relations(&mut model, datasets)?;
    Ok(model)
}

/// Train a freshly initialized model on `dataset`.
pub fn pretrain(dataset: &Dataset, vocab: &Vocab, config: &TrainConfig) -> Result<TrainRun, TrainError> {
    pretrain_from(init_model(&config.model, config.seed, &[dataset])?, dataset, vocab, config)
}

/// [`pretrain`] starting from given parameters.
pub fn pretrain_from(mut model: Model, dataset: &Dataset, vocab: &Vocab, config: &TrainConfig) -> Result<TrainRun, TrainError> {
    if config.stage != Stage::Pretrain {
        return Err(TrainError::InvalidConfig("pretrain needs stage Pretrain".into()));
    }
    config.validate()?;
    let examples = prepare(dataset, vocab, &model.config, &config.retrieval)?;
    let mut optimizer = config.optimizer();
    let log = fit(&mut model, &examples, config, &mut optimizer, |_, _| Ok(Continue::Yes))?;
    Ok(TrainRun { model, log, optimizer })
}

/// Warm-start from `checkpoint` and train on `dataset` with a fresh
/// optimizer. Relations new to the checkpoint get fresh embeddings.
pub fn finetune(dataset: &Dataset, vocab: &Vocab, checkpoint: &ParamStore, config: &TrainConfig) -> Result<TrainRun, TrainError> {
    if config.stage != Stage::Finetune {
        return Err(TrainError::InvalidConfig("finetune needs stage Finetune".into()));
    }
    config.validate()?;
    let model = warm_start(&config.model, config.seed, checkpoint, &[dataset])?;
    let examples = prepare(dataset, vocab, &model.config, &config.retrieval)?;
    let mut model = model;
    let mut optimizer = config.optimizer();
    let log = fit(&mut model, &examples, config, &mut optimizer, |_, _| Ok(Continue::Yes))?;
    Ok(TrainRun { model, log, optimizer })
}

/// A model whose parameters are those of `checkpoint`, extended with
/// relations of `datasets` the checkpoint lacks.
pub fn warm_start(config: &ModelConfig, seed: u64, checkpoint: &ParamStore, datasets: &[&Dataset]) -> Result<Model, TrainError> {
    let mut model = Model::new(*config, seed)?;
    if let Some((_, p)) = model.params.iter().find(|(_, p)| checkpoint.by_name(&p.name).is_none()) {
        return Err(TrainError::CheckpointNames(format!("checkpoint lacks parameter {:?}", p.name)));
    }
    if let Some((_, p)) = checkpoint.iter().find(|(_, p)| model.params.by_name(&p.name).is_none() && !p.name.starts_with("rel.")) {
        return Err(TrainError::CheckpointNames(format!("checkpoint has unknown parameter {:?}", p.name)));
    }
    merge_into(&mut model.params, checkpoint)?;
    register_relations(&mut model, datasets)?;
    Ok(model)
}
