//! Frozen stand-ins for the language model and the image encoder.
//!
//! The decoder is a stack of causal single-head attention blocks with tanh
//! MLPs and residual connections, no normalization. Its weight matrices
//! are stored `[in, out]` and applied as `x · W`. Every tensor created here
//! is frozen.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::embedding::pseudo_embed;
use crate::nn::{ParamStore, Tape, Tensor, Var};

pub(crate) const TOKEN_EMBEDDING: &str = "lm.token_embedding";
pub(crate) const HEAD: &str = "lm.head";
pub(crate) const VIS_ENCODER: &str = "vis.encoder";

pub(crate) fn gaussian(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("positive shape")
}

fn layer_name(l: usize, part: &str) -> String {
    format!("lm.{l}.{part}")
}

pub(crate) fn init(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<(), ModelError> {
    let d = cfg.d_model;
    let inv = 1.0 / (d as f64).sqrt();
    store.add(TOKEN_EMBEDDING, gaussian(rng, &[cfg.vocab, d], 1.0), true)?;
    for l in 0..cfg.decoder_layers {
        for part in ["wq", "wk", "wv", "wo"] {
            store.add(layer_name(l, part), gaussian(rng, &[d, d], inv), true)?;
        }
        store.add(layer_name(l, "mlp_in"), gaussian(rng, &[d, 2 * d], inv), true)?;
        store.add(layer_name(l, "mlp_out"), gaussian(rng, &[2 * d, d], 1.0 / ((2 * d) as f64).sqrt()), true)?;
    }
    store.add(HEAD, gaussian(rng, &[d, cfg.vocab], inv), true)?;
    store.add(VIS_ENCODER, gaussian(rng, &[cfg.d_vis, cfg.d_vis], 1.0 / (cfg.d_vis as f64).sqrt()), true)?;
    Ok(())
}

fn p<'t>(tape: &'t Tape, store: &ParamStore, name: &str) -> Result<Var<'t>, ModelError> {
    Ok(tape.param_named(store, name)?)
}

/// Rows of the token embedding for `ids`.
pub(crate) fn embed_tokens<'t>(tape: &'t Tape, store: &ParamStore, ids: &[usize]) -> Result<Var<'t>, ModelError> {
    Ok(p(tape, store, TOKEN_EMBEDDING)?.gather_rows(ids)?)
}

/// Logits `[n, vocab]` for every row of `x`; row `i` sees rows `0..=i`.
pub(crate) fn decode<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    x: Var<'t>,
) -> Result<Var<'t>, ModelError> {
    let scale = 1.0 / (cfg.d_model as f64).sqrt();
    let mut h = x;
    for l in 0..cfg.decoder_layers {
        let w = |part: &str| p(tape, store, &layer_name(l, part));
        let q = h.matmul(w("wq")?)?;
        let k = h.matmul(w("wk")?)?;
        let v = h.matmul(w("wv")?)?;
        let mixed = q.matmul(k.transpose()?)?.scale(scale).causal_softmax_rows(0).matmul(v)?;
        h = h.add(mixed.matmul(w("wo")?)?)?;
        let mlp = h.matmul(w("mlp_in")?)?.tanh().matmul(w("mlp_out")?)?;
        h = h.add(mlp)?;
    }
    Ok(h.matmul(p(tape, store, HEAD)?)?)
}

/// Patch features `X_I [n_patches, d_vis]` of an image key: pseudo patch
/// vectors passed through the frozen encoder.
pub(crate) fn visual_features<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    key: &str,
) -> Result<Var<'t>, ModelError> {
    let rows: Vec<Vec<f64>> =
        (0..cfg.n_patches).map(|i| pseudo_embed(&format!("patch:{key}#{i}"), cfg.d_vis, cfg.embed_seed)).collect();
    let patches = tape.constant(Tensor::from_rows(&rows)?);
    Ok(patches.matmul(p(tape, store, VIS_ENCODER)?)?)
}
