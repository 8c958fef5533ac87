//! Binary embedding file.
//!
//! An ASCII header line `EMB1 <dim> <count>\n` followed by `count` rows, each
//! an unsigned 64-bit little-endian id and `dim` little-endian f32 values.
//! Relation rows set the id's top bit; entity rows leave it clear.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{EmbeddingError, EmbeddingStore};
use crate::graph::{EntityId, MultimodalGraph, RelationId};

const MAGIC: &str = "EMB1";
const RELATION_FLAG: u64 = 1 << 63;
// Header lines longer than this are rejected before searching further.
const MAX_HEADER: usize = 64;

pub fn write_embeddings(store: &EmbeddingStore) -> Vec<u8> {
    let count = store.entity_vecs().len() + store.relation_vecs().len();
    let mut out = format!("{MAGIC} {} {count}\n", store.dim()).into_bytes();
    let rows = store
        .entity_vecs()
        .iter()
        .map(|(id, v)| (id.0, v))
        .chain(store.relation_vecs().iter().map(|(id, v)| (id.0 | RELATION_FLAG, v)));
    for (id, v) in rows {
        out.extend_from_slice(&id.to_le_bytes());
        for &x in v {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    fs::write(path, write_embeddings(store))?;
    Ok(())
}

/// Parse an embedding file without checking coverage of any graph.
pub fn parse_embeddings(bytes: &[u8]) -> Result<EmbeddingStore, EmbeddingError> {
    let fmt = |m: String| EmbeddingError::Format(m);
    let newline = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| fmt("header is not UTF-8".into()))?;
    let parts: Vec<&str> = header.split(' ').collect();
    let [magic, dim, count] = parts.as_slice() else {
        return Err(fmt("header must be `EMB1 <dim> <count>`".into()));
    };
    if *magic != MAGIC {
        return Err(fmt(format!("bad magic {magic:?}")));
    }
    let dim: usize = dim.parse().map_err(|_| fmt(format!("bad dimension {dim:?}")))?;
    let count: usize = count.parse().map_err(|_| fmt(format!("bad count {count:?}")))?;
    if dim == 0 {
        return Err(fmt("dimension must be positive".into()));
    }
    let row_len = dim
        .checked_mul(4)
        .and_then(|b| b.checked_add(8))
        .ok_or_else(|| fmt("dimension too large".into()))?;
    let body = &bytes[newline + 1..];
    if count.checked_mul(row_len) != Some(body.len()) {
        return Err(fmt(format!(
            "expected {count} rows of {row_len} bytes, found {} bytes",
            body.len()
        )));
    }
    let mut entity_vecs = BTreeMap::new();
    let mut relation_vecs = BTreeMap::new();
    for row in body.chunks_exact(row_len) {
        let raw_id = u64::from_le_bytes(row[..8].try_into().expect("8 bytes"));
        let v: Vec<f64> = row[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(fmt(format!("non-finite value in row {}", raw_id & !RELATION_FLAG)));
        }
        let duplicate = if raw_id & RELATION_FLAG != 0 {
            relation_vecs.insert(RelationId(raw_id & !RELATION_FLAG), v).is_some()
        } else {
            entity_vecs.insert(EntityId(raw_id), v).is_some()
        };
        if duplicate {
            return Err(fmt(format!("duplicate row for id {}", raw_id & !RELATION_FLAG)));
        }
    }
    EmbeddingStore::new(dim, entity_vecs, relation_vecs)
}

/// Load a store and require that it covers every entity and relation of
/// `graph`.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    graph: &MultimodalGraph,
) -> Result<EmbeddingStore, EmbeddingError> {
    let store = parse_embeddings(&fs::read(path)?)?;
    store.check_coverage(graph)?;
    Ok(store)
}
