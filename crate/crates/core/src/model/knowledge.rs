use std::collections::BTreeMap;

use super::{ModelConfig, ModelError};
use crate::embedding::{EmbeddingStore, QuerySource};
use crate::graph::{EntityId, Modality, MultimodalGraph, RelationId, IMAGE_OF};
use crate::nn::{GraphAdjacency, Tensor};
use crate::retrieval::{pseudo_query, retrieve_subgraph, RetrievalConfig};

/// A subgraph laid out for the graph encoder. Node `i` is `entities[i]`;
/// relation `r` of the adjacency is `relations[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub entities: Vec<EntityId>,
    pub modalities: Vec<Modality>,
    pub features: Tensor,
    pub relations: Vec<String>,
    /// Base vectors of `relations`, used to initialize trainable copies.
    pub relation_init: Vec<Vec<f64>>,
    pub adjacency: GraphAdjacency,
    /// `(image node, text node)` for each image entity with an `image of`
    /// link to a text entity; the lowest-id text entity wins.
    pub image_links: Vec<(usize, usize)>,
    pub text_nodes: Vec<usize>,
}

impl KnowledgeGraph {
    pub fn from_graph(graph: &MultimodalGraph, store: &EmbeddingStore) -> Result<Self, ModelError> {
        if graph.is_empty() {
            return Err(ModelError::EmptySubgraph);
        }
        let entities: Vec<EntityId> = graph.entities().map(|e| e.id).collect();
        let index: BTreeMap<EntityId, usize> = entities.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let modalities: Vec<Modality> = graph.entities().map(|e| e.modality).collect();
        let mut rows = Vec::with_capacity(entities.len());
        for id in &entities {
            rows.push(store.entity(*id)?.to_vec());
        }
        let features = Tensor::from_rows(&rows)?;

        let mut rel_index: BTreeMap<RelationId, usize> = BTreeMap::new();
        let mut relations = Vec::new();
        let mut relation_init = Vec::new();
        let mut used: Vec<RelationId> = graph.triples().iter().map(|t| t.relation).collect();
        used.sort();
        used.dedup();
        for rid in used {
            let rel = graph.relation(rid).expect("triples reference known relations");
            rel_index.insert(rid, relations.len());
            relations.push(rel.name.clone());
            relation_init.push(store.relation(rid)?.to_vec());
        }
        let edges = graph.triples().iter().map(|t| (index[&t.head], rel_index[&t.relation], index[&t.tail])).collect();
        let adjacency = GraphAdjacency::new(entities.len(), relations.len(), edges)?;

        let mut image_links = Vec::new();
        for (i, m) in modalities.iter().enumerate() {
            if *m != Modality::Image {
                continue;
            }
            let linked = graph
                .triples()
                .iter()
                .filter(|t| t.head == entities[i] && graph.relation(t.relation).is_some_and(|r| r.name == IMAGE_OF))
                .map(|t| index[&t.tail])
                .filter(|&j| modalities[j] == Modality::Text)
                .min();
            if let Some(j) = linked {
                image_links.push((i, j));
            }
        }
        let text_nodes = (0..entities.len()).filter(|&i| modalities[i] == Modality::Text).collect();
        Ok(KnowledgeGraph { entities, modalities, features, relations, relation_init, adjacency, image_links, text_nodes })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn node(&self, id: EntityId) -> Option<usize> {
        self.entities.iter().position(|e| *e == id)
    }
}

/// Retrieve the query-relevant subgraph of `graph` for a question, dropping
/// image entities first unless the model uses them.
pub fn retrieve_knowledge(
    config: &ModelConfig,
    retrieval: &RetrievalConfig,
    graph: &MultimodalGraph,
    store: &EmbeddingStore,
    question: &str,
    image_key: Option<&str>,
) -> Result<KnowledgeGraph, ModelError> {
    if store.dim() != config.d_kg {
        return Err(ModelError::WidthMismatch { section: "entity embedding", expected: config.d_kg, found: store.dim() });
    }
    let filtered;
    let ambient = if config.use_mmkg {
        graph
    } else {
        filtered = graph.without_modality(Modality::Image);
        &filtered
    };
    let image_key = match retrieval.mode {
        QuerySource::TextOnly => None,
        _ => image_key,
    };
    let query = pseudo_query(question, image_key, retrieval.mode, store.dim(), config.embed_seed)?;
    let sub = retrieve_subgraph(&query, ambient, store, retrieval)?;
    KnowledgeGraph::from_graph(&sub.graph, store)
}
