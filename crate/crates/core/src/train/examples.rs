use std::collections::BTreeMap;

use super::{Dataset, Instance, Target, TrainError};
use crate::embedding::{text_tokens, EmbeddingStore};
use crate::graph::{EntityId, MultimodalGraph};
use crate::model::{retrieve_knowledge, Model, ModelConfig, PreparedInstance, Vocab, UNK};
use crate::retrieval::RetrievalConfig;

/// A model-ready instance. `candidates` pairs each candidate entity with
/// its name tokens; `gold` is set whenever there are candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: PreparedInstance,
    pub candidates: Vec<(EntityId, Vec<usize>)>,
    pub gold: Option<EntityId>,
}

fn entity_name<'g>(graph: &'g MultimodalGraph, id: EntityId, graph_ref: &str) -> Result<&'g str, TrainError> {
    graph
        .entity(id)
        .map(|e| e.name.as_str())
        .ok_or_else(|| TrainError::Data(format!("entity {id} is not in graph {graph_ref:?}")))
}

/// Add every token the dataset can feed or ask for: questions, answers and
/// candidate names. Existing ids are kept.
pub fn extend_vocab(vocab: &mut Vocab, dataset: &Dataset) -> Result<(), TrainError> {
    for inst in &dataset.instances {
        let graph = dataset.graph(inst);
        for t in &inst.question {
            vocab.add(t);
        }
        match &inst.target {
            Target::Answer(tokens) => tokens.iter().for_each(|t| {
                vocab.add(t);
            }),
            Target::Gold(id) => vocab.add_text(entity_name(graph, *id, &inst.graph)?),
        }
        for c in &inst.candidates {
            vocab.add_text(entity_name(graph, *c, &inst.graph)?);
        }
    }
    Ok(())
}

/// Pseudo embedding stores keyed by graph reference.
pub fn embedding_stores(dataset: &Dataset, config: &ModelConfig) -> Result<BTreeMap<String, EmbeddingStore>, TrainError> {
    dataset
        .graphs
        .iter()
        .map(|(name, g)| Ok((name.clone(), EmbeddingStore::pseudo(g, config.d_kg, config.embed_seed)?)))
        .collect()
}

/// Add trainable embeddings for every relation the datasets' graphs use.
pub fn register_relations(model: &mut Model, datasets: &[&Dataset]) -> Result<usize, TrainError> {
    let mut added = 0;
    for d in datasets {
        let stores = embedding_stores(d, &model.config)?;
        for (name, g) in &d.graphs {
            added += model.register_relations(g, &stores[name])?;
        }
    }
    Ok(added)
}

fn prepare_one(
    inst: &Instance,
    graph: &MultimodalGraph,
    store: &EmbeddingStore,
    vocab: &Vocab,
    config: &ModelConfig,
    retrieval: &RetrievalConfig,
) -> Result<Example, TrainError> {
    let encode = |tokens: &[String]| tokens.iter().map(|t| vocab.id(t).unwrap_or(UNK)).collect::<Vec<_>>();
    let name_tokens = |id: EntityId| -> Result<Vec<usize>, TrainError> {
        Ok(encode(&text_tokens(entity_name(graph, id, &inst.graph)?)))
    };
    let answer = match &inst.target {
        Target::Answer(tokens) => encode(tokens),
        Target::Gold(id) => name_tokens(*id)?,
    };
    let candidates =
        inst.candidates.iter().map(|&c| Ok((c, name_tokens(c)?))).collect::<Result<Vec<_>, TrainError>>()?;
    let gold = match (&inst.target, candidates.is_empty()) {
        (_, true) => None,
        (Target::Gold(id), false) => Some(*id),
        (Target::Answer(_), false) => Some(
            candidates
                .iter()
                .find(|(_, toks)| *toks == answer)
                .map(|(id, _)| *id)
                .ok_or_else(|| TrainError::Data(format!("answer {:?} matches no candidate", inst.target)))?,
        ),
    };
    let knowledge = if config.use_kg {
        let question = inst.question.join(" ");
        Some(retrieve_knowledge(config, retrieval, graph, store, &question, inst.image.as_deref())?)
    } else {
        None
    };
    let input = PreparedInstance { question: encode(&inst.question), image: inst.image.clone(), answer, knowledge };
    Ok(Example { input, candidates, gold })
}

/// Retrieve and encode every instance. The vocabulary must already cover
/// the dataset and fit the model.
pub fn prepare(
    dataset: &Dataset,
    vocab: &Vocab,
    config: &ModelConfig,
    retrieval: &RetrievalConfig,
) -> Result<Vec<Example>, TrainError> {
    vocab.check_capacity(config.vocab)?;
    let stores = embedding_stores(dataset, config)?;
    dataset
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            prepare_one(inst, dataset.graph(inst), &stores[&inst.graph], vocab, config, retrieval)
                .map_err(|e| TrainError::Instance { index: i, source: Box::new(e) })
        })
        .collect()
}
