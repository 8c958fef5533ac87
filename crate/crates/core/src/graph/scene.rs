//! Scene-graph ingestion: each object becomes a text entity, its bounding
//! box crop becomes an image entity linked by `image of`, and each of its
//! attributes becomes an attribute entity linked by `attribute of`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    build_graph, Entity, EntityId, GraphError, MultimodalGraph, Relation, RelationId, Triple,
    ATTRIBUTE_OF, IMAGE_OF,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub bbox: BoundingBox,
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRelation {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionQa {
    pub question: String,
    pub answer: String,
    /// Absent for free-form (whole image) questions.
    #[serde(default)]
    pub region_id: Option<u64>,
}

/// One image's scene graph, in a Visual Genome-like JSON shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphRecord {
    pub image_ref: String,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default, alias = "relationships")]
    pub relations: Vec<ObjectRelation>,
    #[serde(default)]
    pub region_qa: Vec<RegionQa>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Keep only region-grounded QA pairs.
    pub region_qa_only: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { region_qa_only: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub image_ref: String,
}

impl BoundingBox {
    /// Crop descriptor used as the payload of the derived image entity.
    pub fn crop_spec(&self, image_ref: &str) -> String {
        format!("{image_ref}#xywh={},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl SceneGraphRecord {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::MalformedRecord(m));
        if self.image_ref.is_empty() {
            return bad("empty image_ref".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.name.trim().is_empty() {
                return bad(format!("object {i} has an empty name"));
            }
            let b = o.bbox;
            if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
                return bad(format!("object {i} has a non-finite bounding box"));
            }
            if b.w < 0.0 || b.h < 0.0 {
                return bad(format!("object {i} has a negative bounding box extent"));
            }
            if o.attributes.iter().any(|a| a.trim().is_empty()) {
                return bad(format!("object {i} has an empty attribute"));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, r) in self.relations.iter().enumerate() {
            if r.subject >= self.objects.len() || r.object >= self.objects.len() {
                return bad(format!("relation {i} indexes past {} objects", self.objects.len()));
            }
            if r.predicate.trim().is_empty() {
                return bad(format!("relation {i} has an empty predicate"));
            }
            if !seen.insert((r.subject, r.predicate.as_str(), r.object)) {
                return bad(format!("relation {i} repeats an earlier relation"));
            }
        }
        Ok(())
    }

    pub fn qa_pairs(&self, options: &IngestOptions) -> Vec<QaPair> {
        self.region_qa
            .iter()
            .filter(|qa| !options.region_qa_only || qa.region_id.is_some())
            .map(|qa| QaPair {
                question: qa.question.clone(),
                answer: qa.answer.clone(),
                image_ref: self.image_ref.clone(),
            })
            .collect()
    }
}

#[derive(Default)]
struct Ingestor {
    entities: Vec<Entity>,
    relations: BTreeMap<String, RelationId>,
    triples: Vec<Triple>,
}

impl Ingestor {
    fn new() -> Self {
        let mut ing = Ingestor::default();
        ing.relation(IMAGE_OF);
        ing.relation(ATTRIBUTE_OF);
        ing
    }

    fn relation(&mut self, name: &str) -> RelationId {
        let next = RelationId(self.relations.len() as u64);
        *self.relations.entry(name.to_string()).or_insert(next)
    }

    fn push_entity(&mut self, mut e: Entity) -> EntityId {
        e.id = EntityId(self.entities.len() as u64);
        let id = e.id;
        self.entities.push(e);
        id
    }

    fn add(&mut self, record: &SceneGraphRecord) -> Result<(), GraphError> {
        record.validate()?;
        let image_of = self.relation(IMAGE_OF);
        let attribute_of = self.relation(ATTRIBUTE_OF);
        let objects: Vec<EntityId> =
            record.objects.iter().map(|o| self.push_entity(Entity::text(0, &o.name))).collect();
        for (o, &text) in record.objects.iter().zip(&objects) {
            let crop = o.bbox.crop_spec(&record.image_ref);
            let img = self.push_entity(Entity::image(0, &o.name, crop));
            self.triples.push(Triple { head: img, relation: image_of, tail: text });
        }
        for (o, &text) in record.objects.iter().zip(&objects) {
            let mut seen = BTreeSet::new();
            for a in &o.attributes {
                if !seen.insert(a.as_str()) {
                    continue;
                }
                let attr = self.push_entity(Entity::attribute(0, a));
                self.triples.push(Triple { head: attr, relation: attribute_of, tail: text });
            }
        }
        for r in &record.relations {
            let rel = self.relation(&r.predicate);
            self.triples.push(Triple {
                head: objects[r.subject],
                relation: rel,
                tail: objects[r.object],
            });
        }
        Ok(())
    }

    fn finish(self) -> Result<MultimodalGraph, GraphError> {
        let relations = self.relations.into_iter().map(|(name, id)| Relation { id, name });
        build_graph(self.entities, relations, self.triples)
    }
}

/// Turn one scene graph into a multimodal graph.
pub fn ingest_scene_graph(record: &SceneGraphRecord) -> Result<MultimodalGraph, GraphError> {
    ingest_scene_graphs(std::slice::from_ref(record))
}

/// Ingest several scene graphs into one graph with a shared relation
/// vocabulary. Entity ids are assigned in record order.
pub fn ingest_scene_graphs(records: &[SceneGraphRecord]) -> Result<MultimodalGraph, GraphError> {
    let mut ing = Ingestor::new();
    for r in records {
        ing.add(r)?;
    }
    ing.finish()
}

/// Parse JSON Lines scene graphs. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn parse_scene_graph_lines(text: &str) -> Result<Vec<SceneGraphRecord>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneGraphRecord = serde_json::from_str(line)
            .map_err(|e| GraphError::Format { line: i + 1, message: e.to_string() })?;
        record.validate().map_err(|e| GraphError::Format { line: i + 1, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}
