//! Finite-difference checks of every trainable building block and of the
//! composed loss, on toy sizes (at most 8 nodes, widths at most 8).

use rand::Rng;

use super::backbone::gaussian;
use super::{KnowledgeGraph, Model, ModelConfig, ModelError, PreparedInstance};
use crate::embedding::EmbeddingStore;
use crate::graph::{build_graph, Entity, Relation, Triple, IMAGE_OF};
use crate::nn::{
    finite_diff_check, linear, scaled_attention, triplet_loss, GradCheck, GraphAdjacency, GraphLayer, GraphLayerKind,
    GraphParams, NnError, ParamStore, Tensor,
};
use crate::rng::stream;

pub const STEP: f64 = 1e-4;
/// Linear maps and attention are smooth enough for a tighter bound.
pub const SMOOTH_TOLERANCE: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub tolerance: f64,
    pub result: GradCheck,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.result.max_rel_error <= self.tolerance && self.result.max_rel_error.is_finite()
    }
}

/// Widths used by the composed-loss checks.
pub fn toy_config(kind: GraphLayerKind) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_kg: 8,
        d_vis: 6,
        n_patches: 3,
        decoder_layers: 1,
        rgat_layers: 2,
        vocab: 12,
        kge_kind: kind,
        alpha: 3.0,
        ..ModelConfig::default()
    }
}

fn store(rng: &mut impl Rng, params: &[(&str, &[usize])]) -> Result<ParamStore, NnError> {
    let mut s = ParamStore::new();
    for (name, shape) in params {
        s.add(*name, gaussian(rng, shape, 0.7), false)?;
    }
    Ok(s)
}

fn check_linear(seed: u64) -> Result<GradCheck, NnError> {
    let rng = &mut stream(seed, &[10]);
    let mut s = store(rng, &[("w", &[4, 5]), ("b", &[4]), ("x", &[3, 5])])?;
    let weights = gaussian(rng, &[3, 4], 1.0);
    finite_diff_check(&mut s, STEP, |t, s: &ParamStore| -> Result<_, NnError> {
        let y = linear(t.param_named(s, "x")?, t.param_named(s, "w")?, t.param_named(s, "b")?)?;
        Ok(y.mul(t.constant(weights.clone()))?.sum())
    })
}

fn check_attention(seed: u64) -> Result<GradCheck, NnError> {
    let rng = &mut stream(seed, &[11]);
    let mut s = store(rng, &[("q", &[3, 6]), ("h", &[5, 6])])?;
    let weights = gaussian(rng, &[3, 6], 1.0);
    finite_diff_check(&mut s, STEP, |t, s: &ParamStore| -> Result<_, NnError> {
        let out = scaled_attention(t.param_named(s, "q")?, t.param_named(s, "h")?)?;
        Ok(out.mul(t.constant(weights.clone()))?.sum())
    })
}

fn check_graph_layer(seed: u64, kind: GraphLayerKind) -> Result<GradCheck, NnError> {
    let rng = &mut stream(seed, &[12, kind as u64]);
    let d = 6;
    let mut s = store(
        rng,
        &[("nodes", &[7, d]), ("rels", &[3, d]), ("w_node", &[d, d]), ("w_rel", &[d, d]), ("attn", &[2 * d]), ("self", &[d])],
    )?;
    let adj = GraphAdjacency::new(7, 3, vec![(0, 0, 1), (1, 1, 2), (2, 2, 0), (3, 0, 1), (4, 1, 4), (1, 2, 5)])?;
    let weights = gaussian(rng, &[7, d], 1.0);
    let layer = GraphLayer { kind, leaky_slope: 0.2, elu_alpha: 1.0 };
    finite_diff_check(&mut s, STEP, |t, s: &ParamStore| -> Result<_, NnError> {
        let p = GraphParams {
            w_node: t.param_named(s, "w_node")?,
            w_rel: t.param_named(s, "w_rel")?,
            attn: t.param_named(s, "attn")?,
            self_rel: t.param_named(s, "self")?,
        };
        let out = layer.forward(&p, t.param_named(s, "nodes")?, Some(t.param_named(s, "rels")?), &adj)?;
        Ok(out.mul(t.constant(weights.clone()))?.sum())
    })
}

fn check_triplet(seed: u64) -> Result<GradCheck, NnError> {
    let rng = &mut stream(seed, &[13]);
    let mut s = store(rng, &[("a", &[8]), ("p", &[8]), ("n", &[8])])?;
    // A margin larger than any squared-distance gap keeps the hinge active.
    let anchor = s.by_name("a").map(|p| p.value.clone()).expect("added above");
    let id = s.id("p").expect("added above");
    s.get_mut(id).value = Tensor::vector(anchor.data().iter().map(|v| v + 0.1).collect())?;
    finite_diff_check(&mut s, STEP, |t, s: &ParamStore| -> Result<_, NnError> {
        triplet_loss(t.param_named(s, "a")?, t.param_named(s, "p")?, t.param_named(s, "n")?, 50.0)
    })
}

fn check_token_nll(seed: u64) -> Result<GradCheck, NnError> {
    let rng = &mut stream(seed, &[14]);
    let mut s = store(rng, &[("logits", &[4, 7])])?;
    finite_diff_check(&mut s, STEP, |t, s: &ParamStore| -> Result<_, NnError> {
        t.param_named(s, "logits")?.token_nll(&[3, 0, 6, 3])
    })
}

/// A six-node subgraph with an image entity linked to its text entity.
pub fn toy_instance(cfg: &ModelConfig) -> Result<PreparedInstance, ModelError> {
    let g = build_graph(
        [
            Entity::text(0, "cup"),
            Entity::text(1, "table"),
            Entity::image(2, "cup", "toy#xywh=0,0,2,2"),
            Entity::attribute(3, "red"),
            Entity::text(4, "plate"),
            Entity::image(5, "plate", "toy#xywh=2,2,2,2"),
        ],
        [Relation::new(0, IMAGE_OF), Relation::new(1, "attribute of"), Relation::new(2, "on")],
        [Triple::new(2, 0, 0), Triple::new(5, 0, 4), Triple::new(3, 1, 0), Triple::new(0, 2, 1), Triple::new(4, 2, 1)],
    )?;
    let store = EmbeddingStore::pseudo(&g, cfg.d_kg, cfg.embed_seed)?;
    let kg = KnowledgeGraph::from_graph(&g, &store)?;
    Ok(PreparedInstance { question: vec![2, 3, 4, 5], image: Some("toy".into()), answer: vec![6, 7], knowledge: Some(kg) })
}

fn check_full_loss(seed: u64, kind: GraphLayerKind) -> Result<GradCheck, ModelError> {
    let cfg = toy_config(kind);
    let inst = toy_instance(&cfg)?;
    let mut model = Model::new(cfg, seed)?;
    model.register_knowledge(inst.knowledge.as_ref().expect("toy instance has knowledge"))?;
    finite_diff_check(&mut model, STEP, |tape, m: &Model| Ok::<_, ModelError>(m.forward(tape, &inst, seed)?.total))
}

/// Every check, in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<CheckRow>, ModelError> {
    let row = |name: &str, tolerance, result| CheckRow { name: name.to_string(), tolerance, result };
    let mut rows = vec![
        row("linear", SMOOTH_TOLERANCE, check_linear(seed)?),
        row("attention", SMOOTH_TOLERANCE, check_attention(seed)?),
    ];
    for kind in [GraphLayerKind::Rgat, GraphLayerKind::Gat, GraphLayerKind::Gnn] {
        rows.push(row(&format!("graph.{}", kind.as_str()), TOLERANCE, check_graph_layer(seed, kind)?));
    }
    rows.push(row("triplet", TOLERANCE, check_triplet(seed)?));
    rows.push(row("token_nll", TOLERANCE, check_token_nll(seed)?));
    for kind in [GraphLayerKind::Rgat, GraphLayerKind::Gat, GraphLayerKind::Gnn] {
        rows.push(row(&format!("loss.{}", kind.as_str()), TOLERANCE, check_full_loss(seed, kind)?));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes_on_several_seeds() {
        for seed in 0..3 {
            for r in run_all(seed).unwrap() {
                assert!(r.passed(), "seed {seed}: {r:?}");
                assert!(r.result.checked > 0, "seed {seed}: {r:?}");
            }
        }
    }
}
