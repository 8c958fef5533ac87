//! Fixed-dimension vectors for entities, relations, triples and queries.
//!
//! Stored vectors are always f32-representable so that the binary file
//! format round-trips bit-exactly; arithmetic is done in f64.

mod io;

pub use io::{load_embeddings, parse_embeddings, save_embeddings, write_embeddings};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{EntityId, Modality, MultimodalGraph, RelationId, Triple};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("no embedding for {0}")]
    MissingEmbedding(String),
    #[error("embedding file does not cover {}", describe_missing(.entities, .relations))]
    Coverage { entities: Vec<EntityId>, relations: Vec<RelationId> },
    #[error("io error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

fn describe_missing(entities: &[EntityId], relations: &[RelationId]) -> String {
    let mut parts = Vec::new();
    if !entities.is_empty() {
        let ids: Vec<String> = entities.iter().map(|e| e.to_string()).collect();
        parts.push(format!("entities [{}]", ids.join(", ")));
    }
    if !relations.is_empty() {
        let ids: Vec<String> = relations.iter().map(|r| r.to_string()).collect();
        parts.push(format!("relations [{}]", ids.join(", ")));
    }
    parts.join(" and ")
}

impl From<std::io::Error> for EmbeddingError {
    fn from(e: std::io::Error) -> Self {
        EmbeddingError::Io(e.to_string())
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine of the angle between `a` and `b`, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>, EmbeddingError> {
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(EmbeddingError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

fn mean_of(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors[0].len();
    let mut out = vec![0.0; dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Deterministic unit vector for `key`: SHA-256 of the seed and key seeds a
/// ChaCha8 stream of standard normals, which is then normalized.
pub fn pseudo_embed(key: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((dim as u64).to_le_bytes());
    hasher.update(key.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Ok(unit) = normalize(v) {
            return unit;
        }
    }
}

/// Lowercased whitespace tokens.
pub fn text_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Bag-of-tokens text vector: normalized mean of per-token pseudo vectors,
/// so texts sharing tokens have correlated embeddings.
pub fn embed_text(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>, EmbeddingError> {
    let tokens = text_tokens(text);
    if tokens.is_empty() {
        return Err(EmbeddingError::ZeroVector);
    }
    let vecs: Vec<Vec<f64>> =
        tokens.iter().map(|t| pseudo_embed(&format!("tok:{t}"), dim, seed)).collect();
    let refs: Vec<&[f64]> = vecs.iter().map(Vec::as_slice).collect();
    normalize(mean_of(&refs))
}

/// Stand-in for an image encoder's pooled feature: one pseudo vector per
/// image key.
pub fn embed_image(key: &str, dim: usize, seed: u64) -> Vec<f64> {
    pseudo_embed(&format!("img:{key}"), dim, seed)
}

fn round_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuerySource {
    TextOnly,
    ImageOnly,
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub vec: Vec<f64>,
    pub source: QuerySource,
}

/// Entity and relation vectors of a common dimension. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entity_vecs: BTreeMap<EntityId, Vec<f64>>,
    relation_vecs: BTreeMap<RelationId, Vec<f64>>,
}

impl EmbeddingStore {
    /// Values are rounded to f32 precision.
    pub fn new(
        dim: usize,
        entity_vecs: BTreeMap<EntityId, Vec<f64>>,
        relation_vecs: BTreeMap<RelationId, Vec<f64>>,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::Format("dimension must be positive".into()));
        }
        for v in entity_vecs.values().chain(relation_vecs.values()) {
            if v.len() != dim {
                return Err(EmbeddingError::DimensionMismatch { left: dim, right: v.len() });
            }
        }
        Ok(EmbeddingStore {
            dim,
            entity_vecs: entity_vecs.into_iter().map(|(k, v)| (k, round_f32(&v))).collect(),
            relation_vecs: relation_vecs.into_iter().map(|(k, v)| (k, round_f32(&v))).collect(),
        })
    }

    /// Pseudo vectors for every entity and relation of `graph`: text and
    /// attribute entities and relations embed their names as text, image
    /// entities embed their payload reference.
    pub fn pseudo(graph: &MultimodalGraph, dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        let mut entity_vecs = BTreeMap::new();
        for e in graph.entities() {
            let v = match (e.modality, &e.payload_ref) {
                (Modality::Image, Some(key)) => embed_image(key, dim, seed),
                _ => embed_text(&e.name, dim, seed)?,
            };
            entity_vecs.insert(e.id, v);
        }
        let mut relation_vecs = BTreeMap::new();
        for r in graph.relations() {
            relation_vecs.insert(r.id, embed_text(&r.name, dim, seed)?);
        }
        EmbeddingStore::new(dim, entity_vecs, relation_vecs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity(&self, id: EntityId) -> Result<&[f64], EmbeddingError> {
        self.entity_vecs
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| EmbeddingError::MissingEmbedding(format!("entity {id}")))
    }

    pub fn relation(&self, id: RelationId) -> Result<&[f64], EmbeddingError> {
        self.relation_vecs
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| EmbeddingError::MissingEmbedding(format!("relation {id}")))
    }

    pub fn entity_vecs(&self) -> &BTreeMap<EntityId, Vec<f64>> {
        &self.entity_vecs
    }

    pub fn relation_vecs(&self) -> &BTreeMap<RelationId, Vec<f64>> {
        &self.relation_vecs
    }

    /// Error listing every entity and relation of `graph` without a vector.
    pub fn check_coverage(&self, graph: &MultimodalGraph) -> Result<(), EmbeddingError> {
        let entities: Vec<EntityId> =
            graph.entities().map(|e| e.id).filter(|id| !self.entity_vecs.contains_key(id)).collect();
        let relations: Vec<RelationId> = graph
            .relations()
            .map(|r| r.id)
            .filter(|id| !self.relation_vecs.contains_key(id))
            .collect();
        if entities.is_empty() && relations.is_empty() {
            Ok(())
        } else {
            Err(EmbeddingError::Coverage { entities, relations })
        }
    }
}

/// Elementwise mean of the head, relation and tail vectors.
pub fn triple_embedding(triple: &Triple, store: &EmbeddingStore) -> Result<Vec<f64>, EmbeddingError> {
    let h = store.entity(triple.head)?;
    let r = store.relation(triple.relation)?;
    let t = store.entity(triple.tail)?;
    Ok(mean_of(&[h, r, t]))
}

/// Text and image vectors fused by renormalized mean.
pub fn combine_text_image(text: &[f64], image: &[f64]) -> Result<Vec<f64>, EmbeddingError> {
    if text.len() != image.len() {
        return Err(EmbeddingError::DimensionMismatch { left: text.len(), right: image.len() });
    }
    normalize(mean_of(&[text, image]))
}
