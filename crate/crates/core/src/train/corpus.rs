//! One QA instance per line:
//!
//! ```text
//! Q <tokens…> | IMG <key?> | A <tokens…> | CAND <ids…?> | G <graph-ref>
//! ```
//!
//! `A #<id>` names a gold entity instead of answer tokens. Graph
//! references are paths relative to the corpus file. Tokens are lowercased.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::TrainError;
use crate::embedding::text_tokens;
use crate::graph::{load_graph, save_graph, EntityId, MultimodalGraph};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Answer(Vec<String>),
    Gold(EntityId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub question: Vec<String>,
    pub image: Option<String>,
    pub target: Target,
    pub candidates: Vec<EntityId>,
    pub graph: String,
}

const TAGS: [&str; 5] = ["Q", "IMG", "A", "CAND", "G"];

fn valid_token(t: &str) -> bool {
    !t.is_empty() && !t.contains('|') && !t.chars().any(char::is_whitespace)
}

fn parse_id(s: &str) -> Option<EntityId> {
    s.parse().ok().map(EntityId)
}

/// Parse a single instance line.
pub fn parse_instance(line: &str) -> Result<Instance, String> {
    let sections: Vec<&str> = line.split('|').map(str::trim).collect();
    if sections.len() != TAGS.len() {
        return Err(format!("expected {} sections separated by '|', found {}", TAGS.len(), sections.len()));
    }
    let mut bodies = Vec::with_capacity(TAGS.len());
    for (section, tag) in sections.iter().zip(TAGS) {
        let mut words = section.split_whitespace();
        if words.next() != Some(tag) {
            return Err(format!("expected section {tag}, found {section:?}"));
        }
        bodies.push(words.collect::<Vec<_>>());
    }
    let question = text_tokens(&bodies[0].join(" "));
    if question.is_empty() {
        return Err("empty question".into());
    }
    let image = match bodies[1].as_slice() {
        [] => None,
        [key] => Some(key.to_string()),
        _ => return Err("IMG takes at most one key".into()),
    };
    let target = match bodies[2].as_slice() {
        [] => return Err("empty answer".into()),
        [gold] if gold.starts_with('#') => {
            Target::Gold(parse_id(&gold[1..]).ok_or_else(|| format!("bad gold entity {gold:?}"))?)
        }
        tokens => {
            if let Some(t) = tokens.iter().find(|t| t.starts_with('#')) {
                return Err(format!("gold entity {t:?} must be the only answer token"));
            }
            Target::Answer(text_tokens(&tokens.join(" ")))
        }
    };
    let candidates = bodies[3]
        .iter()
        .map(|s| parse_id(s).ok_or_else(|| format!("bad candidate id {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if candidates.iter().collect::<BTreeSet<_>>().len() != candidates.len() {
        return Err("duplicate candidate id".into());
    }
    if let Target::Gold(g) = target {
        if !candidates.is_empty() && !candidates.contains(&g) {
            return Err(format!("gold entity {g} is not among the candidates"));
        }
    }
    let graph = match bodies[4].as_slice() {
        [g] => g.to_string(),
        _ => return Err("G takes exactly one graph reference".into()),
    };
    Ok(Instance { question, image, target, candidates, graph })
}

/// Inverse of [`parse_instance`] for instances with valid tokens.
pub fn write_instance(inst: &Instance) -> String {
    let mut out = format!("Q {} | IMG", inst.question.join(" "));
    if let Some(key) = &inst.image {
        let _ = write!(out, " {key}");
    }
    match &inst.target {
        Target::Answer(tokens) => {
            let _ = write!(out, " | A {}", tokens.join(" "));
        }
        Target::Gold(id) => {
            let _ = write!(out, " | A #{id}");
        }
    }
    out.push_str(" | CAND");
    for c in &inst.candidates {
        let _ = write!(out, " {c}");
    }
    let _ = write!(out, " | G {}", inst.graph);
    out
}

impl Instance {
    /// Whether [`write_instance`] reproduces this instance.
    pub fn is_writable(&self) -> bool {
        let answer_ok = match &self.target {
            Target::Answer(t) => !t.is_empty() && t.iter().all(|s| valid_token(s) && !s.starts_with('#')),
            Target::Gold(_) => true,
        };
        !self.question.is_empty()
            && self.question.iter().all(|s| valid_token(s) && *s == s.to_lowercase())
            && answer_ok
            && self.image.as_deref().is_none_or(valid_token)
            && valid_token(&self.graph)
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<Instance>, TrainError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_instance(trimmed).map_err(|message| TrainError::Corpus { line: i + 1, message })?);
    }
    Ok(out)
}

pub fn write_corpus(instances: &[Instance]) -> String {
    instances.iter().map(|i| write_instance(i) + "\n").collect()
}

/// A corpus with its graphs resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub graphs: BTreeMap<String, MultimodalGraph>,
}

impl Dataset {
    /// Pair instances with graphs, checking every reference resolves.
    pub fn new(instances: Vec<Instance>, graphs: BTreeMap<String, MultimodalGraph>) -> Result<Self, TrainError> {
        for inst in &instances {
            if !graphs.contains_key(&inst.graph) {
                return Err(TrainError::Data(format!("graph reference {:?} does not resolve", inst.graph)));
            }
        }
        Ok(Dataset { instances, graphs })
    }

    pub fn load(corpus: impl AsRef<Path>) -> Result<Self, TrainError> {
        let corpus = corpus.as_ref();
        let text = std::fs::read_to_string(corpus).map_err(|e| TrainError::Io(format!("{}: {e}", corpus.display())))?;
        let instances = parse_corpus(&text)?;
        let base = corpus.parent().unwrap_or(Path::new("."));
        let mut graphs = BTreeMap::new();
        for inst in &instances {
            if graphs.contains_key(&inst.graph) {
                continue;
            }
            let path = base.join(&inst.graph);
            let g = load_graph(&path).map_err(|e| TrainError::Graph { path: path.clone(), source: e })?;
            graphs.insert(inst.graph.clone(), g);
        }
        Dataset::new(instances, graphs)
    }

    /// Write the corpus to `corpus` and every graph next to it under its
    /// reference.
    pub fn save(&self, corpus: impl AsRef<Path>) -> Result<(), TrainError> {
        let corpus = corpus.as_ref();
        let io = |p: &Path, e: std::io::Error| TrainError::Io(format!("{}: {e}", p.display()));
        let base = corpus.parent().unwrap_or(Path::new("."));
        for (name, g) in &self.graphs {
            let path: PathBuf = base.join(name);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            }
            save_graph(g, &path).map_err(|e| TrainError::Graph { path: path.clone(), source: e })?;
        }
        std::fs::write(corpus, write_corpus(&self.instances)).map_err(|e| io(corpus, e))
    }

    pub fn graph(&self, inst: &Instance) -> &MultimodalGraph {
        &self.graphs[&inst.graph]
    }
}
