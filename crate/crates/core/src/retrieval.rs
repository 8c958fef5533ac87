//! Query-driven subgraph retrieval.
//!
//! Every triple is scored by cosine similarity between the query and the
//! triple's mean embedding. The entities of the top `n_seed` triples seed a
//! one-hop expansion (repeated `hops` times), and the `n_final` best-scoring
//! triples of the expansion form the result.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::embedding::{
    combine_text_image, cosine_similarity, embed_image, embed_text, norm, triple_embedding,
    EmbeddingError, EmbeddingStore, QueryEmbedding, QuerySource,
};
use crate::graph::{one_hop_neighborhood, EntityId, GraphError, MultimodalGraph, Triple};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("cannot retrieve from an empty graph")]
    EmptyGraph,
    #[error("query vector is zero")]
    ZeroQuery,
    #[error("query mode {0:?} needs a vector that was not supplied")]
    MissingModality(QuerySource),
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalConfig {
    pub mode: QuerySource,
    /// Number of top triples whose entities seed the expansion.
    pub n_seed: usize,
    /// Number of triples kept from the expansion.
    pub n_final: usize,
    pub hops: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { mode: QuerySource::TextOnly, n_seed: 10, n_final: 10, hops: 1 }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        for (name, v) in [("n_seed", self.n_seed), ("n_final", self.n_final), ("hops", self.hops)] {
            if v == 0 {
                return Err(RetrievalError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub score: f64,
}

/// Descending by score, ties broken by (head, relation, tail) ascending.
fn ranking_order(a: &ScoredTriple, b: &ScoredTriple) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.triple.cmp(&b.triple))
}

pub fn rank_triples(
    query: &QueryEmbedding,
    triples: &[Triple],
    store: &EmbeddingStore,
) -> Result<Vec<ScoredTriple>, RetrievalError> {
    if norm(&query.vec) == 0.0 {
        return Err(RetrievalError::ZeroQuery);
    }
    let mut scored = triples
        .iter()
        .map(|t| {
            let emb = triple_embedding(t, store)?;
            Ok(ScoredTriple { triple: *t, score: cosine_similarity(&query.vec, &emb)? })
        })
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    scored.sort_by(ranking_order);
    Ok(scored)
}

/// A retrieved subgraph with the scores of its triples in ranking order.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedSubgraph {
    pub graph: MultimodalGraph,
    pub scored: Vec<ScoredTriple>,
}

impl RetrievedSubgraph {
    /// `<head> <rel> <tail> <score>` per line, six decimals.
    pub fn score_sidecar(&self) -> String {
        let mut out = String::new();
        for s in &self.scored {
            let t = s.triple;
            let _ = writeln!(out, "{} {} {} {:.6}", t.head, t.relation, t.tail, s.score);
        }
        out
    }
}

pub fn retrieve_subgraph(
    query: &QueryEmbedding,
    graph: &MultimodalGraph,
    store: &EmbeddingStore,
    config: &RetrievalConfig,
) -> Result<RetrievedSubgraph, RetrievalError> {
    config.validate()?;
    if graph.is_empty() {
        return Err(RetrievalError::EmptyGraph);
    }
    let ranked = rank_triples(query, graph.triples(), store)?;
    let mut seeds: BTreeSet<EntityId> = ranked
        .iter()
        .take(config.n_seed)
        .flat_map(|s| [s.triple.head, s.triple.tail])
        .collect();
    let mut expansion = one_hop_neighborhood(graph, &seeds)?;
    for _ in 1..config.hops {
        seeds = expansion.entities().map(|e| e.id).collect();
        expansion = one_hop_neighborhood(graph, &seeds)?;
    }
    let scored: Vec<ScoredTriple> = ranked
        .into_iter()
        .filter(|s| expansion.contains_triple(&s.triple))
        .take(config.n_final)
        .collect();
    let subgraph = graph.restrict_to(scored.iter().map(|s| &s.triple), []);
    Ok(RetrievedSubgraph { graph: subgraph, scored })
}

/// Choose the query vector for a retrieval mode. Text and image vectors are
/// passed through unchanged; the combined mode takes their renormalized mean.
pub fn ablation_mode_select(
    text: Option<&[f64]>,
    image: Option<&[f64]>,
    mode: QuerySource,
) -> Result<QueryEmbedding, RetrievalError> {
    let missing = || RetrievalError::MissingModality(mode);
    let vec = match mode {
        QuerySource::TextOnly => text.ok_or_else(missing)?.to_vec(),
        QuerySource::ImageOnly => image.ok_or_else(missing)?.to_vec(),
        QuerySource::Combined => {
            combine_text_image(text.ok_or_else(missing)?, image.ok_or_else(missing)?)?
        }
    };
    Ok(QueryEmbedding { vec, source: mode })
}

/// Build a query from question text and an optional image key using the
/// pseudo encoders.
pub fn pseudo_query(
    question: &str,
    image_key: Option<&str>,
    mode: QuerySource,
    dim: usize,
    seed: u64,
) -> Result<QueryEmbedding, RetrievalError> {
    let text = match mode {
        QuerySource::ImageOnly => None,
        _ => Some(embed_text(question, dim, seed)?),
    };
    let image = image_key.map(|k| embed_image(k, dim, seed));
    ablation_mode_select(text.as_deref(), image.as_deref(), mode)
}

/// Scores of a ranking keyed by triple, for callers that need lookups.
pub fn score_map(scored: &[ScoredTriple]) -> BTreeMap<Triple, f64> {
    scored.iter().map(|s| (s.triple, s.score)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Entity, Relation, RelationId};

    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn query(vec: Vec<f64>) -> QueryEmbedding {
        QueryEmbedding { vec, source: QuerySource::TextOnly }
    }

    #[test]
    fn singleton_ranking() {
        let g = build_graph(
            [Entity::text(0, "a"), Entity::text(1, "b")],
            [Relation::new(0, "r")],
            [Triple::new(0, 0, 1)],
        )
        .unwrap();
        let s = EmbeddingStore::pseudo(&g, 8, 0).unwrap();
        let ranked = rank_triples(&query(basis(8, 0)), g.triples(), &s).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].triple, Triple::new(0, 0, 1));
    }

    #[test]
    fn exact_match_ranks_first() {
        // Triple 0 embeds to e0, the others to e1 and e2; all orthogonal.
        let dim = 3;
        let ents = (0..6u64).map(|i| (EntityId(i), basis(dim, (i / 2) as usize))).collect();
        let rels = (0..3u64).map(|i| (RelationId(i), basis(dim, i as usize))).collect();
        let store = EmbeddingStore::new(dim, ents, rels).unwrap();
        let triples = [Triple::new(2, 1, 3), Triple::new(0, 0, 1), Triple::new(4, 2, 5)];
        let ranked = rank_triples(&query(basis(dim, 0)), &triples, &store).unwrap();
        assert_eq!(ranked[0].triple, Triple::new(0, 0, 1));
        assert!((ranked[0].score - 1.0).abs() < 1e-12);
        // Ties at score 0 fall back to id order.
        assert_eq!(ranked[1].triple, Triple::new(2, 1, 3));
    }

    #[test]
    fn zero_query_rejected() {
        let g = build_graph([Entity::text(0, "a")], [Relation::new(0, "r")], [Triple::new(0, 0, 0)])
            .unwrap();
        let s = EmbeddingStore::pseudo(&g, 4, 0).unwrap();
        assert_eq!(
            retrieve_subgraph(&query(vec![0.0; 4]), &g, &s, &RetrievalConfig::default()),
            Err(RetrievalError::ZeroQuery)
        );
    }

    #[test]
    fn saturation_returns_everything() {
        let g = build_graph(
            (0..4).map(|i| Entity::text(i, format!("n{i}"))),
            [Relation::new(0, "r")],
            [Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(2, 0, 3)],
        )
        .unwrap();
        let s = EmbeddingStore::pseudo(&g, 16, 0).unwrap();
        let cfg = RetrievalConfig { n_seed: 3, n_final: 10, ..Default::default() };
        let r = retrieve_subgraph(&pseudo_query("n1", None, QuerySource::TextOnly, 16, 0).unwrap(), &g, &s, &cfg)
            .unwrap();
        assert_eq!(r.graph.triple_count(), 3);
        assert_eq!(r.scored.len(), 3);
    }

    /// Hand trace: 12 triples on basis directions. The query equals the
    /// embedding direction of (0 -r0-> 1). Entities 0 and 1 touch four more
    /// triples; with n_seed = 1 the expansion holds those five, and the top
    /// three by score are the match plus triples 0-r1->2 and 1-r2->3, which
    /// share the most weight with the query.
    #[test]
    fn hand_traced_twelve_triple_graph() {
        let dim = 8;
        let mut ents = BTreeMap::new();
        let mut text_ents = Vec::new();
        for i in 0..10u64 {
            let mut v = vec![0.0; dim];
            match i {
                0 => v[0] = 1.0,
                1 => v[1] = 1.0,
                _ => v[(i as usize % 6) + 2] = 1.0,
            }
            ents.insert(EntityId(i), v);
            text_ents.push(Entity::text(i, format!("e{i}")));
        }
        let mut rels = BTreeMap::new();
        rels.insert(RelationId(0), { let mut v = vec![0.0; dim]; v[0] = 0.5; v[1] = 0.5; v[2] = 0.1; v });
        rels.insert(RelationId(1), { let mut v = vec![0.0; dim]; v[0] = 0.6; v });
        rels.insert(RelationId(2), { let mut v = vec![0.0; dim]; v[1] = 0.4; v });
        rels.insert(RelationId(3), basis(dim, 7));
        let store = EmbeddingStore::new(dim, ents, rels).unwrap();
        let triples = vec![
            Triple::new(0, 0, 1), // match
            Triple::new(0, 1, 2),
            Triple::new(1, 2, 3),
            Triple::new(4, 3, 0),
            Triple::new(1, 3, 5),
            Triple::new(2, 3, 3),
            Triple::new(3, 3, 4),
            Triple::new(4, 3, 5),
            Triple::new(5, 3, 6),
            Triple::new(6, 3, 7),
            Triple::new(7, 3, 8),
            Triple::new(8, 3, 9),
        ];
        let g = build_graph(text_ents, (0..4).map(|i| Relation::new(i, format!("r{i}"))), triples)
            .unwrap();
        let q = query(triple_embedding(&Triple::new(0, 0, 1), &store).unwrap());
        let cfg = RetrievalConfig { n_seed: 1, n_final: 3, ..Default::default() };
        let r = retrieve_subgraph(&q, &g, &store, &cfg).unwrap();
        let got: Vec<Triple> = r.scored.iter().map(|s| s.triple).collect();
        assert_eq!(got, vec![Triple::new(0, 0, 1), Triple::new(0, 1, 2), Triple::new(1, 2, 3)]);
        assert!((r.scored[0].score - 1.0).abs() < 1e-6);
        let ids: Vec<u64> = r.graph.entities().map(|e| e.id.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        // (5 -r3-> 6) has a positive score but neither endpoint is a seed.
        assert!(r.scored.iter().all(|s| [0, 1].contains(&s.triple.head.0) || [0, 1].contains(&s.triple.tail.0)));
    }

    #[test]
    fn n_final_sweep_values() {
        for n in [10, 20] {
            let cfg = RetrievalConfig { n_final: n, n_seed: n, ..Default::default() };
            cfg.validate().unwrap();
        }
        assert!(RetrievalConfig { hops: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn mode_selection() {
        let t = [0.6, 0.8];
        let q = ablation_mode_select(Some(&t), None, QuerySource::TextOnly).unwrap();
        assert_eq!(q.vec, t.to_vec());
        let q = ablation_mode_select(Some(&t), Some(&t), QuerySource::Combined).unwrap();
        assert!((q.vec[0] - 0.6).abs() < 1e-12 && (q.vec[1] - 0.8).abs() < 1e-12);
        assert_eq!(
            ablation_mode_select(Some(&t), None, QuerySource::ImageOnly),
            Err(RetrievalError::MissingModality(QuerySource::ImageOnly))
        );
    }

    #[test]
    fn sidecar_format() {
        let r = RetrievedSubgraph {
            graph: MultimodalGraph::default(),
            scored: vec![ScoredTriple { triple: Triple::new(1, 2, 3), score: 0.5 }],
        };
        assert_eq!(r.score_sidecar(), "1 2 3 0.500000\n");
    }
}
