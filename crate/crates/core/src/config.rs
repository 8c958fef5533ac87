//! Flat `key = value` run configuration. Unknown keys are errors; `#`
//! starts a comment line.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::embedding::QuerySource;
use crate::train::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
}

pub fn parse_query_source(s: &str) -> Result<QuerySource, String> {
    match s {
        "text" => Ok(QuerySource::TextOnly),
        "image" => Ok(QuerySource::ImageOnly),
        "both" => Ok(QuerySource::Combined),
        other => Err(format!("unknown mode {other:?}; expected text, image or both")),
    }
}

pub fn query_source_str(mode: QuerySource) -> &'static str {
    match mode {
        QuerySource::TextOnly => "text",
        QuerySource::ImageOnly => "image",
        QuerySource::Combined => "both",
    }
}

/// Every key in the order [`write_config`] emits them.
pub const KEYS: [&str; 28] = [
    "seed",
    "epochs",
    "lr",
    "weight_decay",
    "batch_size",
    "retrieval_mode",
    "n_seed",
    "n_final",
    "hops",
    "d_model",
    "d_kg",
    "d_vis",
    "n_patches",
    "decoder_layers",
    "rgat_layers",
    "kge_kind",
    "lambda",
    "alpha",
    "m_align",
    "use_kg",
    "use_mmkg",
    "use_alignment",
    "vocab",
    "max_answer_len",
    "kg_query",
    "leaky_slope",
    "elu_alpha",
    "embed_seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), message: format!("{value:?}: {e}") })
}

fn with<T, E: std::fmt::Display>(key: &str, r: Result<T, E>) -> Result<T, ConfigError> {
    r.map_err(|e| ConfigError::Value { key: key.into(), message: e.to_string() })
}

/// Set one key. Values are only checked for syntax here; ranges are checked
/// by [`TrainConfig::validate`].
pub fn set(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let m = &mut cfg.model;
    let r = &mut cfg.retrieval;
    match key {
        "seed" => cfg.seed = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "lr" => cfg.lr = parse(key, value)?,
        "weight_decay" => cfg.weight_decay = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "retrieval_mode" => r.mode = with(key, parse_query_source(value))?,
        "n_seed" => r.n_seed = parse(key, value)?,
        "n_final" => r.n_final = parse(key, value)?,
        "hops" => r.hops = parse(key, value)?,
        "d_model" => m.d_model = parse(key, value)?,
        "d_kg" => m.d_kg = parse(key, value)?,
        "d_vis" => m.d_vis = parse(key, value)?,
        "n_patches" => m.n_patches = parse(key, value)?,
        "decoder_layers" => m.decoder_layers = parse(key, value)?,
        "rgat_layers" => m.rgat_layers = parse(key, value)?,
        "kge_kind" => m.kge_kind = with(key, value.parse())?,
        "lambda" => m.lambda = parse(key, value)?,
        "alpha" => m.alpha = parse(key, value)?,
        "m_align" => m.m_align = parse(key, value)?,
        "use_kg" => m.use_kg = parse(key, value)?,
        "use_mmkg" => m.use_mmkg = parse(key, value)?,
        "use_alignment" => m.use_alignment = parse(key, value)?,
        "vocab" => m.vocab = parse(key, value)?,
        "max_answer_len" => m.max_answer_len = parse(key, value)?,
        "kg_query" => m.kg_query = with(key, value.parse())?,
        "leaky_slope" => m.leaky_slope = parse(key, value)?,
        "elu_alpha" => m.elu_alpha = parse(key, value)?,
        "embed_seed" => m.embed_seed = parse(key, value)?,
        other => return Err(ConfigError::UnknownKey(other.into())),
    }
    Ok(())
}

/// Apply every `key = value` line of `text` on top of `cfg`.
pub fn apply_config(cfg: &mut TrainConfig, text: &str) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ConfigError::Line { line: i + 1, message };
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
        set(cfg, key.trim(), value.trim()).map_err(|e| err(e.to_string()))?;
    }
    Ok(())
}

/// Every key with its current value; floats in shortest round-trip form.
pub fn write_config(cfg: &TrainConfig) -> String {
    let m = &cfg.model;
    let r = &cfg.retrieval;
    let values: [String; 28] = [
        cfg.seed.to_string(),
        cfg.epochs.to_string(),
        cfg.lr.to_string(),
        cfg.weight_decay.to_string(),
        cfg.batch_size.to_string(),
        query_source_str(r.mode).into(),
        r.n_seed.to_string(),
        r.n_final.to_string(),
        r.hops.to_string(),
        m.d_model.to_string(),
        m.d_kg.to_string(),
        m.d_vis.to_string(),
        m.n_patches.to_string(),
        m.decoder_layers.to_string(),
        m.rgat_layers.to_string(),
        m.kge_kind.as_str().into(),
        m.lambda.to_string(),
        m.alpha.to_string(),
        m.m_align.to_string(),
        m.use_kg.to_string(),
        m.use_mmkg.to_string(),
        m.use_alignment.to_string(),
        m.vocab.to_string(),
        m.max_answer_len.to_string(),
        m.kg_query.as_str().into(),
        m.leaky_slope.to_string(),
        m.elu_alpha.to_string(),
        m.embed_seed.to_string(),
    ];
    let mut out = String::new();
    for (k, v) in KEYS.iter().zip(values) {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}
