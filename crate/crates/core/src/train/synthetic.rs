//! Color questions over small scenes.
//!
//! Every instance has three objects on one scene: the asked object and a
//! distractor object each carry a different color attribute, and both sit
//! on a support object. The two colors are the candidates, so an answer
//! can only be read off the `attribute of` triple of the asked object.
//! Colors are drawn independently per instance and image keys are unique,
//! so nothing but the graph tells the two candidates apart.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;

use super::{Dataset, Instance, Target, TrainError};
use crate::embedding::QuerySource;
use crate::graph::{build_graph, Entity, EntityId, MultimodalGraph, Relation, Triple, IMAGE_OF};
use crate::retrieval::RetrievalConfig;
use crate::rng::stream;

pub const OBJECTS: [&str; 12] =
    ["cup", "plate", "table", "book", "lamp", "chair", "box", "bowl", "shelf", "vase", "desk", "bag"];
pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "brown", "purple"];

pub const ATTRIBUTE_OF: &str = "attribute of";
pub const ON: &str = "on";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub instances: usize,
    pub seed: u64,
    /// Prefix of image keys and graph file names; keeps corpora generated
    /// with different seeds apart.
    pub prefix: String,
}

impl SyntheticConfig {
    pub fn new(instances: usize, seed: u64) -> Self {
        SyntheticConfig { instances, seed, prefix: format!("s{seed}-") }
    }
}

/// Retrieval that keeps only the neighborhood of the best-matching triple:
/// one seed triple, one hop.
pub fn synthetic_retrieval() -> RetrievalConfig {
    RetrievalConfig { mode: QuerySource::TextOnly, n_seed: 1, n_final: 10, hops: 1 }
}

fn scene(key: &str, objects: [&str; 3], colors: [&str; 2], rng: &mut impl Rng) -> (MultimodalGraph, EntityId, EntityId) {
    // Entity ids of the asked and distractor object (0/1) and of their
    // colors (6/7) are swapped at random so id order carries no signal.
    let flip = rng.random_bool(0.5);
    let (asked, other) = if flip { (1, 0) } else { (0, 1) };
    let flip_color = rng.random_bool(0.5);
    let (asked_color, other_color) = if flip_color { (7, 6) } else { (6, 7) };
    let mut names = [""; 3];
    names[asked as usize] = objects[0];
    names[other as usize] = objects[1];
    names[2] = objects[2];
    let mut entities: Vec<Entity> = names.iter().enumerate().map(|(i, n)| Entity::text(i as u64, *n)).collect();
    let boxes = ["0,0,8,8", "8,0,8,8", "0,8,16,8"];
    for (i, n) in names.iter().enumerate() {
        entities.push(Entity::image(3 + i as u64, *n, format!("{key}#xywh={}", boxes[i])));
    }
    let mut attrs = [(asked_color, colors[0]), (other_color, colors[1])];
    attrs.sort();
    entities.extend(attrs.iter().map(|(id, c)| Entity::attribute(*id, *c)));
    let relations = [Relation::new(0, IMAGE_OF), Relation::new(1, ATTRIBUTE_OF), Relation::new(2, ON)];
    let triples = [
        Triple::new(3, 0, 0),
        Triple::new(4, 0, 1),
        Triple::new(5, 0, 2),
        Triple::new(asked_color, 1, asked),
        Triple::new(other_color, 1, other),
        Triple::new(0, 2, 2),
        Triple::new(1, 2, 2),
    ];
    let graph = build_graph(entities, relations, triples).expect("scene layout is well-formed");
    (graph, EntityId(asked_color), EntityId(other_color))
}

pub fn generate(config: &SyntheticConfig) -> Result<Dataset, TrainError> {
    let mut instances = Vec::with_capacity(config.instances);
    let mut graphs = BTreeMap::new();
    for i in 0..config.instances {
        let rng = &mut stream(config.seed, &[4, i as u64]);
        let o = sample(rng, OBJECTS.len(), 3);
        let c = sample(rng, COLORS.len(), 2);
        let key = format!("{}{i}", config.prefix);
        let (graph, gold, distractor) = scene(&key, [OBJECTS[o.index(0)], OBJECTS[o.index(1)], OBJECTS[o.index(2)]], [COLORS[c.index(0)], COLORS[c.index(1)]], rng);
        let graph_ref = format!("graphs/{key}.graph");
        let mut candidates = vec![gold, distractor];
        candidates.sort();
        instances.push(Instance {
            question: ["what", "color", "is", "the", OBJECTS[o.index(0)]].map(String::from).to_vec(),
            image: Some(key),
            target: Target::Answer(vec![COLORS[c.index(0)].to_string()]),
            candidates,
            graph: graph_ref.clone(),
        });
        graphs.insert(graph_ref, graph);
    }
    Dataset::new(instances, graphs)
}
