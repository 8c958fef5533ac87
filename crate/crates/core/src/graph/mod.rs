//! Multimodal knowledge graph: entities tagged by modality, named
//! relations, directed triples and a two-sided adjacency index.

mod io;
mod scene;

pub use io::{load_graph, parse_graph, save_graph, write_graph};
pub use scene::{
    ingest_scene_graph, ingest_scene_graphs, parse_scene_graph_lines, BoundingBox, IngestOptions,
    ObjectRelation, QaPair, RegionQa, SceneGraphRecord, SceneObject,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Relation name linking an image crop to its object entity.
pub const IMAGE_OF: &str = "image of";
/// Relation name linking an attribute to its object entity.
pub const ATTRIBUTE_OF: &str = "attribute of";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u64);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Text,
    Image,
    Attribute,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Attribute => "attribute",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "attribute" => Ok(Modality::Attribute),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub modality: Modality,
    /// Opaque reference to the entity's payload, e.g. an image crop spec.
    pub payload_ref: Option<String>,
}

impl Entity {
    pub fn text(id: u64, name: impl Into<String>) -> Self {
        Entity { id: EntityId(id), name: name.into(), modality: Modality::Text, payload_ref: None }
    }

    pub fn attribute(id: u64, name: impl Into<String>) -> Self {
        Entity {
            id: EntityId(id),
            name: name.into(),
            modality: Modality::Attribute,
            payload_ref: None,
        }
    }

    pub fn image(id: u64, name: impl Into<String>, payload_ref: impl Into<String>) -> Self {
        Entity {
            id: EntityId(id),
            name: name.into(),
            modality: Modality::Image,
            payload_ref: Some(payload_ref.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Relation {
    pub id: RelationId,
    pub name: String,
}

impl Relation {
    pub fn new(id: u64, name: impl Into<String>) -> Self {
        Relation { id: RelationId(id), name: name.into() }
    }
}

/// A directed edge `head --relation--> tail`. Ordering is lexicographic on
/// (head, relation, tail), which is the tie-break used by retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u64, relation: u64, tail: u64) -> Self {
        Triple { head: EntityId(head), relation: RelationId(relation), tail: EntityId(tail) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Outgoing,
    Incoming,
}

/// One adjacency entry seen from a given entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Adjacent {
    pub relation: RelationId,
    pub neighbor: EntityId,
    pub direction: Direction,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("triple {triple:?} references missing {kind} {id}")]
    DanglingReference { triple: Triple, kind: &'static str, id: u64 },
    #[error("duplicate triple {0:?}")]
    DuplicateTriple(Triple),
    #[error("image entity {0} has no payload reference")]
    MissingPayload(EntityId),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("malformed scene graph record: {0}")]
    MalformedRecord(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

/// An immutable, validated multimodal knowledge graph.
///
/// Entities and relations are keyed by id; triples are kept sorted, so two
/// graphs with the same sets compare equal regardless of input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultimodalGraph {
    entities: BTreeMap<EntityId, Entity>,
    relations: BTreeMap<RelationId, Relation>,
    triples: Vec<Triple>,
    adjacency: BTreeMap<EntityId, Vec<Adjacent>>,
}

/// Validate the inputs and build the graph with its adjacency index.
pub fn build_graph(
    entities: impl IntoIterator<Item = Entity>,
    relations: impl IntoIterator<Item = Relation>,
    triples: impl IntoIterator<Item = Triple>,
) -> Result<MultimodalGraph, GraphError> {
    let mut entity_map = BTreeMap::new();
    for e in entities {
        if e.modality == Modality::Image && e.payload_ref.is_none() {
            return Err(GraphError::MissingPayload(e.id));
        }
        let id = e.id;
        if entity_map.insert(id, e).is_some() {
            return Err(GraphError::DuplicateId { kind: "entity", id: id.0 });
        }
    }
    let mut relation_map = BTreeMap::new();
    for r in relations {
        let id = r.id;
        if relation_map.insert(id, r).is_some() {
            return Err(GraphError::DuplicateId { kind: "relation", id: id.0 });
        }
    }
    let mut triple_set = BTreeSet::new();
    for t in triples {
        for (kind, id, ok) in [
            ("entity", t.head.0, entity_map.contains_key(&t.head)),
            ("relation", t.relation.0, relation_map.contains_key(&t.relation)),
            ("entity", t.tail.0, entity_map.contains_key(&t.tail)),
        ] {
            if !ok {
                return Err(GraphError::DanglingReference { triple: t, kind, id });
            }
        }
        if !triple_set.insert(t) {
            return Err(GraphError::DuplicateTriple(t));
        }
    }
    Ok(MultimodalGraph::assemble(entity_map, relation_map, triple_set.into_iter().collect()))
}

impl MultimodalGraph {
    // Inputs must already be consistent.
    fn assemble(
        entities: BTreeMap<EntityId, Entity>,
        relations: BTreeMap<RelationId, Relation>,
        triples: Vec<Triple>,
    ) -> Self {
        let mut adjacency: BTreeMap<EntityId, Vec<Adjacent>> =
            entities.keys().map(|&id| (id, Vec::new())).collect();
        for t in &triples {
            adjacency.get_mut(&t.head).expect("validated head").push(Adjacent {
                relation: t.relation,
                neighbor: t.tail,
                direction: Direction::Outgoing,
            });
            adjacency.get_mut(&t.tail).expect("validated tail").push(Adjacent {
                relation: t.relation,
                neighbor: t.head,
                direction: Direction::Incoming,
            });
        }
        MultimodalGraph { entities, relations, triples, adjacency }
    }

    /// No entities (and therefore no triples).
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entities(&self) -> impl ExactSizeIterator<Item = &Entity> + '_ {
        self.entities.values()
    }

    pub fn relations(&self) -> impl ExactSizeIterator<Item = &Relation> + '_ {
        self.relations.values()
    }

    /// Triples in (head, relation, tail) order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(&id)
    }

    pub fn relation(&self, id: RelationId) -> Option<&Relation> {
        self.relations.get(&id)
    }

    pub fn relation_by_name(&self, name: &str) -> Option<&Relation> {
        self.relations.values().find(|r| r.name == name)
    }

    pub fn contains_entity(&self, id: EntityId) -> bool {
        self.entities.contains_key(&id)
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    /// Adjacency of `id` in both directions; empty for unknown entities.
    pub fn neighbors(&self, id: EntityId) -> &[Adjacent] {
        self.adjacency.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, id: EntityId) -> usize {
        self.neighbors(id).len()
    }

    pub fn count_by_modality(&self, modality: Modality) -> usize {
        self.entities.values().filter(|e| e.modality == modality).count()
    }

    /// A graph holding `triples` (which must belong to `self`), their
    /// endpoint entities and `extra_entities`. The relation vocabulary is
    /// carried over whole.
    pub fn restrict_to<'a>(
        &self,
        triples: impl IntoIterator<Item = &'a Triple>,
        extra_entities: impl IntoIterator<Item = EntityId>,
    ) -> MultimodalGraph {
        let mut entities = BTreeMap::new();
        let mut kept = BTreeSet::new();
        for t in triples {
            debug_assert!(self.contains_triple(t));
            for id in [t.head, t.tail] {
                entities.insert(id, self.entities[&id].clone());
            }
            kept.insert(*t);
        }
        for id in extra_entities {
            if let Some(e) = self.entities.get(&id) {
                entities.insert(id, e.clone());
            }
        }
        MultimodalGraph::assemble(entities, self.relations.clone(), kept.into_iter().collect())
    }

    /// The graph with all entities of `modality` and their triples removed.
    pub fn without_modality(&self, modality: Modality) -> MultimodalGraph {
        let keep = |id: &EntityId| self.entities[id].modality != modality;
        let triples: Vec<&Triple> =
            self.triples.iter().filter(|t| keep(&t.head) && keep(&t.tail)).collect();
        let rest: Vec<EntityId> = self.entities.keys().copied().filter(keep).collect();
        self.restrict_to(triples, rest)
    }

    /// Whether every entity, relation and triple of `self` is in `other`.
    pub fn is_subgraph_of(&self, other: &MultimodalGraph) -> bool {
        self.entities.iter().all(|(id, e)| other.entities.get(id) == Some(e))
            && self.triples.iter().all(|t| other.contains_triple(t))
    }
}

/// Seeds, every entity adjacent to a seed, and exactly the triples with at
/// least one endpoint among the seeds.
pub fn one_hop_neighborhood(
    graph: &MultimodalGraph,
    seeds: &BTreeSet<EntityId>,
) -> Result<MultimodalGraph, GraphError> {
    if let Some(missing) = seeds.iter().find(|id| !graph.contains_entity(**id)) {
        return Err(GraphError::UnknownEntity(*missing));
    }
    let triples =
        graph.triples.iter().filter(|t| seeds.contains(&t.head) || seeds.contains(&t.tail));
    Ok(graph.restrict_to(triples, seeds.iter().copied()))
}
