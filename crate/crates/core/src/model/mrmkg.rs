use rand::seq::index::sample;
use rand::Rng;

use super::backbone::{self, gaussian};
use super::{KgQuery, KnowledgeGraph, ModelConfig, ModelError, EOS};
use crate::embedding::EmbeddingStore;
use crate::graph::{EntityId, MultimodalGraph};
use crate::nn::{concat_rows, linear, scaled_attention, triplet_loss, GraphLayer, GraphParams, ParamStore, Tape, Tensor, Var};
use crate::rng::stream;
use crate::train::RankList;

const VISUAL_W: &str = "visual.w";
const VISUAL_B: &str = "visual.b";
const KNOWLEDGE_W: &str = "knowledge.w";
const KNOWLEDGE_B: &str = "knowledge.b";
const SELF_RELATION: &str = "rel.self";

fn relation_param(name: &str) -> String {
    format!("rel.{name}")
}

fn rgat_param(layer: usize, part: &str) -> String {
    format!("rgat.{layer}.{part}")
}

/// Everything the forward pass needs about one example, with retrieval
/// already done.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInstance {
    pub question: Vec<usize>,
    pub image: Option<String>,
    /// Target tokens without the trailing `<eos>`.
    pub answer: Vec<usize>,
    pub knowledge: Option<KnowledgeGraph>,
}

/// `H_K′ ⊕ H_I′ ⊕ H_T` with the length of each section.
#[derive(Debug, Clone, Copy)]
pub struct Prompt<'t> {
    pub matrix: Var<'t>,
    pub lens: (usize, usize, usize),
}

impl Prompt<'_> {
    pub fn rows(&self) -> usize {
        self.lens.0 + self.lens.1 + self.lens.2
    }
}

/// Stack the present sections in knowledge, visual, text order.
pub fn assemble_prompt<'t>(
    knowledge: Option<Var<'t>>,
    visual: Option<Var<'t>>,
    text: Var<'t>,
    width: usize,
) -> Result<Prompt<'t>, ModelError> {
    let mut parts = Vec::with_capacity(3);
    let mut lens = [0usize; 3];
    for (slot, (section, v)) in [("knowledge", knowledge), ("visual", visual), ("text", Some(text))].into_iter().enumerate() {
        if let Some(v) = v {
            let shape = v.shape();
            if shape.len() != 2 || shape[1] != width {
                return Err(ModelError::WidthMismatch { section, expected: width, found: *shape.last().unwrap_or(&0) });
            }
            lens[slot] = shape[0];
            parts.push(v);
        }
    }
    Ok(Prompt { matrix: concat_rows(&parts)?, lens: (lens[0], lens[1], lens[2]) })
}

/// `L_g + λ·L_a`; with `λ = 0` the result is `L_g` itself.
pub fn total_loss<'t>(l_g: Var<'t>, l_a: Var<'t>, lambda: f64) -> Result<Var<'t>, ModelError> {
    if lambda == 0.0 {
        return Ok(l_g);
    }
    Ok(l_g.add(l_a.scale(lambda))?)
}

/// Sampled alignment terms. `samples` holds `(anchor, positive, negative)`
/// node indices.
#[derive(Debug, Clone)]
pub struct Alignment<'t> {
    pub loss: Var<'t>,
    pub samples: Vec<(usize, usize, usize)>,
    /// True when the subgraph had no linked image entity.
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub generation: Var<'t>,
    pub alignment: Var<'t>,
    pub alignment_skipped: bool,
    pub prompt_lens: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl AsRef<ParamStore> for Model {
    fn as_ref(&self) -> &ParamStore {
        &self.params
    }
}

impl AsMut<ParamStore> for Model {
    fn as_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl Model {
    /// Fresh parameters from `seed`. Relation embeddings are added later by
    /// [`Model::register_relations`].
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        backbone::init(&mut params, &config, &mut stream(seed, &[0]))?;
        let rng = &mut stream(seed, &[1]);
        let (dm, dk, dv) = (config.d_model, config.d_kg, config.d_vis);
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        params.add(VISUAL_W, gaussian(rng, &[dm, dv], inv(dv)), false)?;
        params.add(VISUAL_B, Tensor::zeros(&[dm]), false)?;
        params.add(KNOWLEDGE_W, gaussian(rng, &[dm, dk], inv(dk)), false)?;
        params.add(KNOWLEDGE_B, Tensor::zeros(&[dm]), false)?;
        for l in 0..config.rgat_layers {
            params.add(rgat_param(l, "w_node"), gaussian(rng, &[dk, dk], inv(dk)), false)?;
            params.add(rgat_param(l, "w_rel"), gaussian(rng, &[dk, dk], inv(dk)), false)?;
            params.add(rgat_param(l, "attn"), gaussian(rng, &[2 * dk], inv(2 * dk)), false)?;
        }
        params.add(SELF_RELATION, gaussian(rng, &[dk], inv(dk)), false)?;
        Ok(Model { config, params })
    }

    /// Add a trainable copy of every relation of `graph` not seen before,
    /// initialized from `store`. Returns how many were added.
    pub fn register_relations(&mut self, graph: &MultimodalGraph, store: &EmbeddingStore) -> Result<usize, ModelError> {
        let mut added = 0;
        for r in graph.relations() {
            added += self.ensure_relation(&r.name, store.relation(r.id)?)? as usize;
        }
        Ok(added)
    }

    pub fn register_knowledge(&mut self, kg: &KnowledgeGraph) -> Result<usize, ModelError> {
        let mut added = 0;
        for (name, init) in kg.relations.iter().zip(&kg.relation_init) {
            added += self.ensure_relation(name, init)? as usize;
        }
        Ok(added)
    }

    fn ensure_relation(&mut self, name: &str, init: &[f64]) -> Result<bool, ModelError> {
        let key = relation_param(name);
        if self.params.id(&key).is_some() {
            return Ok(false);
        }
        if init.len() != self.config.d_kg {
            return Err(ModelError::WidthMismatch { section: "relation embedding", expected: self.config.d_kg, found: init.len() });
        }
        self.params.add(key, Tensor::vector(init.to_vec())?, false)?;
        Ok(true)
    }

    /// Names of frozen and trainable parameters.
    pub fn trainable_partition(&self) -> (Vec<String>, Vec<String>) {
        self.params.partition()
    }

    fn p<'t>(&self, tape: &'t Tape, name: &str) -> Result<Var<'t>, ModelError> {
        Ok(tape.param_named(&self.params, name)?)
    }

    pub fn embed_tokens<'t>(&self, tape: &'t Tape, ids: &[usize]) -> Result<Var<'t>, ModelError> {
        backbone::embed_tokens(tape, &self.params, ids)
    }

    /// Frozen patch features of an image key.
    pub fn visual_features<'t>(&self, tape: &'t Tape, key: &str) -> Result<Var<'t>, ModelError> {
        backbone::visual_features(tape, &self.params, &self.config, key)
    }

    /// `H_I′ = attention(H_T, X_I·W_Iᵀ + b_I)`.
    pub fn encode_visual<'t>(&self, tape: &'t Tape, x_i: Var<'t>, h_t: Var<'t>) -> Result<Var<'t>, ModelError> {
        let h_i = linear(x_i, self.p(tape, VISUAL_W)?, self.p(tape, VISUAL_B)?)?;
        Ok(scaled_attention(h_t, h_i)?)
    }

    /// Graph layers over the subgraph, then the knowledge adapter. Returns
    /// the pooled `H_K′` (one row per query row) and the per-node `H_K`.
    pub fn encode_knowledge<'t>(
        &self,
        tape: &'t Tape,
        kg: &KnowledgeGraph,
        query: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>), ModelError> {
        let rel_rows = kg
            .relations
            .iter()
            .map(|name| self.p(tape, &relation_param(name))?.reshape(vec![1, self.config.d_kg]).map_err(ModelError::from))
            .collect::<Result<Vec<_>, _>>()?;
        let relations = if rel_rows.is_empty() { None } else { Some(concat_rows(&rel_rows)?) };
        let layer = GraphLayer {
            kind: self.config.kge_kind,
            leaky_slope: self.config.leaky_slope,
            elu_alpha: self.config.elu_alpha,
        };
        let self_rel = self.p(tape, SELF_RELATION)?;
        let mut x = tape.constant(kg.features.clone());
        for l in 0..self.config.rgat_layers {
            let params = GraphParams {
                w_node: self.p(tape, &rgat_param(l, "w_node"))?,
                w_rel: self.p(tape, &rgat_param(l, "w_rel"))?,
                attn: self.p(tape, &rgat_param(l, "attn"))?,
                self_rel,
            };
            x = layer.forward(&params, x, relations, &kg.adjacency)?;
        }
        let h_k = linear(x, self.p(tape, KNOWLEDGE_W)?, self.p(tape, KNOWLEDGE_B)?)?;
        Ok((scaled_attention(query, h_k)?, h_k))
    }

    /// Sum of triplet terms over up to `m_align` sampled image entities.
    pub fn alignment_loss<'t>(
        &self,
        tape: &'t Tape,
        h_k: Var<'t>,
        kg: &KnowledgeGraph,
        rng: &mut impl Rng,
    ) -> Result<Alignment<'t>, ModelError> {
        if kg.image_links.is_empty() {
            return Ok(Alignment { loss: tape.constant(Tensor::scalar(0.0)), samples: vec![], skipped: true });
        }
        if kg.text_nodes.len() < 2 {
            return Err(ModelError::InsufficientTextEntities(kg.text_nodes.len()));
        }
        let m = self.config.m_align.min(kg.image_links.len());
        let mut picked = sample(rng, kg.image_links.len(), m).into_vec();
        picked.sort_unstable();
        let mut samples = Vec::with_capacity(m);
        let mut loss: Option<Var<'t>> = None;
        for i in picked {
            let (anchor, positive) = kg.image_links[i];
            let others: Vec<usize> = kg.text_nodes.iter().copied().filter(|&t| t != positive).collect();
            let negative = others[rng.random_range(0..others.len())];
            let term = triplet_loss(h_k.row(anchor)?, h_k.row(positive)?, h_k.row(negative)?, self.config.alpha)?;
            loss = Some(match loss {
                Some(acc) => acc.add(term)?,
                None => term,
            });
            samples.push((anchor, positive, negative));
        }
        Ok(Alignment { loss: loss.expect("at least one sample"), samples, skipped: false })
    }

    /// The prompt and, when the knowledge section is present, the per-node
    /// knowledge rows.
    pub fn prompt<'t>(&self, tape: &'t Tape, inst: &PreparedInstance) -> Result<(Prompt<'t>, Option<Var<'t>>), ModelError> {
        if inst.question.is_empty() {
            return Err(ModelError::EmptyQuestion);
        }
        let h_t = self.embed_tokens(tape, &inst.question)?;
        let h_i = match &inst.image {
            Some(key) => Some(self.encode_visual(tape, self.visual_features(tape, key)?, h_t)?),
            None => None,
        };
        let (h_k_pooled, h_k) = if self.config.use_kg {
            let kg = inst.knowledge.as_ref().ok_or(ModelError::EmptySubgraph)?;
            let query = match (self.config.kg_query, h_i) {
                (KgQuery::Image, Some(v)) => v,
                _ => h_t,
            };
            let (pooled, nodes) = self.encode_knowledge(tape, kg, query)?;
            (Some(pooled), Some(nodes))
        } else {
            (None, None)
        };
        Ok((assemble_prompt(h_k_pooled, h_i, h_t, self.config.d_model)?, h_k))
    }

    /// Mean next-token NLL of `tokens ⊕ <eos>` after the prompt, without
    /// length checks.
    fn continuation_nll<'t>(&self, tape: &'t Tape, prompt: &Prompt<'t>, tokens: &[usize]) -> Result<Var<'t>, ModelError> {
        let input = if tokens.is_empty() {
            prompt.matrix
        } else {
            concat_rows(&[prompt.matrix, self.embed_tokens(tape, tokens)?])?
        };
        let logits = backbone::decode(tape, &self.params, &self.config, input)?;
        let start = prompt.rows() - 1;
        let rows: Vec<usize> = (start..start + tokens.len() + 1).collect();
        let mut targets = tokens.to_vec();
        targets.push(EOS);
        Ok(logits.gather_rows(&rows)?.token_nll(&targets)?)
    }

    /// Teacher-forced answer NLL, averaged over answer tokens and `<eos>`.
    pub fn generation_loss<'t>(&self, tape: &'t Tape, prompt: &Prompt<'t>, answer: &[usize]) -> Result<Var<'t>, ModelError> {
        if answer.is_empty() {
            return Err(ModelError::InvalidAnswer);
        }
        if answer.len() > self.config.max_answer_len {
            return Err(ModelError::AnswerTooLong { len: answer.len(), max: self.config.max_answer_len });
        }
        self.continuation_nll(tape, prompt, answer)
    }

    /// All loss terms for one instance. `sample_seed` drives the alignment
    /// sampling.
    pub fn forward<'t>(&self, tape: &'t Tape, inst: &PreparedInstance, sample_seed: u64) -> Result<LossParts<'t>, ModelError> {
        let (prompt, h_k) = self.prompt(tape, inst)?;
        let generation = self.generation_loss(tape, &prompt, &inst.answer)?;
        let (alignment, skipped) = match (self.config.use_alignment, h_k, inst.knowledge.as_ref()) {
            (true, Some(h_k), Some(kg)) => {
                let a = self.alignment_loss(tape, h_k, kg, &mut stream(sample_seed, &[]))?;
                (a.loss, a.skipped)
            }
            _ => (tape.constant(Tensor::scalar(0.0)), true),
        };
        let total = if self.config.use_alignment { total_loss(generation, alignment, self.config.lambda)? } else { generation };
        Ok(LossParts { total, generation, alignment, alignment_skipped: skipped, prompt_lens: prompt.lens })
    }

    /// Greedy decoding until `<eos>` or `max_answer_len` tokens. Ties go to
    /// the lowest token id.
    pub fn greedy_decode(&self, inst: &PreparedInstance) -> Result<Vec<usize>, ModelError> {
        let mut out = Vec::new();
        while out.len() < self.config.max_answer_len {
            let tape = Tape::new();
            let (prompt, _) = self.prompt(&tape, inst)?;
            let input = if out.is_empty() {
                prompt.matrix
            } else {
                concat_rows(&[prompt.matrix, self.embed_tokens(&tape, &out)?])?
            };
            let logits = backbone::decode(&tape, &self.params, &self.config, input)?.value();
            let last = logits.row(logits.rows() - 1);
            let mut best = 0;
            for (i, v) in last.iter().enumerate() {
                if *v > last[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            out.push(best);
        }
        Ok(out)
    }

    /// Score each candidate by the summed log-likelihood of its tokens and
    /// `<eos>`, best first, ties by entity id.
    pub fn rank_candidates(
        &self,
        inst: &PreparedInstance,
        candidates: &[(EntityId, Vec<usize>)],
        gold: Option<EntityId>,
    ) -> Result<RankList, ModelError> {
        if candidates.is_empty() {
            return Err(ModelError::EmptyCandidates);
        }
        let tape = Tape::new();
        let (prompt, _) = self.prompt(&tape, inst)?;
        let mut scores = Vec::with_capacity(candidates.len());
        for (id, tokens) in candidates {
            let nll = self.continuation_nll(&tape, &prompt, tokens)?.item();
            scores.push((*id, -nll * (tokens.len() + 1) as f64));
        }
        Ok(RankList::new(scores, gold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, GraphLayerKind};

    fn small() -> ModelConfig {
        ModelConfig { d_model: 4, d_kg: 4, d_vis: 3, n_patches: 2, vocab: 8, rgat_layers: 1, ..ModelConfig::default() }
    }

    fn kg_fixture(cfg: &ModelConfig) -> KnowledgeGraph {
        use crate::graph::{build_graph, Entity, Relation, Triple, IMAGE_OF};
        let g = build_graph(
            [
                Entity::text(0, "cup"),
                Entity::text(1, "table"),
                Entity::image(2, "cup", "s#xywh=0,0,1,1"),
                Entity::attribute(3, "red"),
                Entity::text(4, "plate"),
            ],
            [Relation::new(0, IMAGE_OF), Relation::new(1, "attribute of"), Relation::new(2, "on")],
            [Triple::new(2, 0, 0), Triple::new(3, 1, 0), Triple::new(0, 2, 1), Triple::new(4, 2, 1)],
        )
        .unwrap();
        let store = EmbeddingStore::pseudo(&g, cfg.d_kg, 0).unwrap();
        KnowledgeGraph::from_graph(&g, &store).unwrap()
    }

    fn model_with(cfg: ModelConfig, kg: &KnowledgeGraph) -> Model {
        let mut m = Model::new(cfg, 3).unwrap();
        m.register_knowledge(kg).unwrap();
        m
    }

    fn inst(kg: KnowledgeGraph) -> PreparedInstance {
        PreparedInstance { question: vec![2, 3, 4], image: Some("scene".into()), answer: vec![5], knowledge: Some(kg) }
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let cfg = small();
        let m = model_with(cfg, &kg_fixture(&cfg));
        let (frozen, trainable) = m.trainable_partition();
        assert_eq!(frozen.len() + trainable.len(), m.params.len());
        assert!(frozen.iter().all(|n| n.starts_with("lm.") || n.starts_with("vis.")));
        assert!(trainable.iter().all(|n| !frozen.contains(n)));
        assert!(trainable.contains(&"rel.image of".to_string()));
    }

    #[test]
    fn prompt_sections_are_additive_and_ordered() {
        let cfg = small();
        let kg = kg_fixture(&cfg);
        let m = model_with(cfg, &kg);
        let tape = Tape::new();
        let (p, h_k) = m.prompt(&tape, &inst(kg.clone())).unwrap();
        assert_eq!(p.lens, (3, 3, 3));
        assert_eq!(p.matrix.rows(), 9);
        assert_eq!(h_k.unwrap().rows(), kg.len());
        let base = Model { config: ModelConfig { use_kg: false, use_mmkg: false, use_alignment: false, ..cfg }, ..m };
        let (p, _) = base.prompt(&tape, &inst(kg.clone())).unwrap();
        assert_eq!(p.lens, (0, 3, 3));
        let text = PreparedInstance { image: None, ..inst(kg) };
        assert_eq!(base.prompt(&tape, &text).unwrap().0.lens, (0, 0, 3));

        let a = tape.constant(Tensor::zeros(&[4, 4]));
        let b = tape.constant(Tensor::zeros(&[4, 4]));
        let c = tape.constant(Tensor::zeros(&[8, 4]));
        assert_eq!(assemble_prompt(Some(a), Some(b), c, 4).unwrap().rows(), 16);
        let wide = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(assemble_prompt(Some(wide), None, c, 4), Err(ModelError::WidthMismatch { section: "knowledge", .. })));
    }

    #[test]
    fn uniform_decoder_gives_log_vocab() {
        let cfg = ModelConfig { vocab: 4, use_kg: false, use_mmkg: false, use_alignment: false, ..small() };
        let mut m = Model::new(cfg, 0).unwrap();
        let head = m.params.id("lm.head").unwrap();
        m.params.get_mut(head).value = Tensor::zeros(&[4, 4]);
        let tape = Tape::new();
        let i = PreparedInstance { question: vec![2, 3], image: None, answer: vec![2, 3, 2], knowledge: None };
        let (p, _) = m.prompt(&tape, &i).unwrap();
        let l = m.generation_loss(&tape, &p, &i.answer).unwrap().item();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(m.generation_loss(&tape, &p, &[]), Err(ModelError::InvalidAnswer)));
        assert!(matches!(m.generation_loss(&tape, &p, &[2; 9]), Err(ModelError::AnswerTooLong { len: 9, max: 8 })));
    }

    #[test]
    fn single_image_token_attention_repeats_projection() {
        let cfg = ModelConfig { n_patches: 1, ..small() };
        let m = Model::new(cfg, 1).unwrap();
        let tape = Tape::new();
        let x = m.visual_features(&tape, "k").unwrap();
        let h_t = m.embed_tokens(&tape, &[2, 3, 4]).unwrap();
        let out = m.encode_visual(&tape, x, h_t).unwrap().value();
        let proj = linear(x, m.p(&tape, VISUAL_W).unwrap(), m.p(&tape, VISUAL_B).unwrap()).unwrap().value();
        for r in 0..3 {
            for c in 0..4 {
                assert!((out.get(r, c) - proj.get(0, c)).abs() < 1e-12);
            }
        }
        let twice = concat_rows(&[x, x]).unwrap();
        let dup = m.encode_visual(&tape, twice, h_t).unwrap().value();
        assert!(dup.data().iter().zip(out.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn visual_matches_hand_trace() {
        let cfg = ModelConfig { d_model: 2, d_vis: 2, ..small() };
        let mut m = Model::new(cfg, 1).unwrap();
        let w = m.params.id(VISUAL_W).unwrap();
        m.params.get_mut(w).value = Tensor::from_rows(&[[1.0, 0.5], [0.0, -1.0]]).unwrap();
        let b = m.params.id(VISUAL_B).unwrap();
        m.params.get_mut(b).value = Tensor::vector(vec![0.1, 0.2]).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [-1.0, 0.0]]).unwrap());
        let q = tape.constant(Tensor::from_rows(&[[0.5, 1.0]]).unwrap());
        let out = m.encode_visual(&tape, x, q).unwrap().value();
        // H_I = [[2.1, -1.8], [-0.9, 0.2]]; scores = q·H_Iᵀ/√2.
        let h = [[2.1, -1.8], [-0.9, 0.2]];
        let s: Vec<f64> = h.iter().map(|r| (0.5 * r[0] + 1.0 * r[1]) / 2f64.sqrt()).collect();
        let z = s[0].exp() + s[1].exp();
        let (a0, a1) = (s[0].exp() / z, s[1].exp() / z);
        assert!((out.get(0, 0) - (a0 * h[0][0] + a1 * h[1][0])).abs() < 1e-12);
        assert!((out.get(0, 1) - (a0 * h[0][1] + a1 * h[1][1])).abs() < 1e-12);
    }

    #[test]
    fn alignment_examples() {
        let cfg = ModelConfig { m_align: 1, alpha: 0.5, ..small() };
        let kg = kg_fixture(&cfg);
        let m = model_with(cfg, &kg);
        let tape = Tape::new();
        // Rows: image 2 at distance 1 from its text 0 and from both other
        // text nodes (1, 4).
        let mut rows = vec![vec![0.0; 4]; 5];
        rows[0] = vec![1.0, 0.0, 0.0, 0.0];
        rows[1] = vec![0.0, 1.0, 0.0, 0.0];
        rows[4] = vec![0.0, 1.0, 0.0, 0.0];
        rows[2] = vec![0.0, 0.0, 0.0, 0.0];
        rows[3] = vec![5.0, 5.0, 5.0, 5.0];
        let h_k = tape.constant(Tensor::from_rows(&rows).unwrap());
        let a = m.alignment_loss(&tape, h_k, &kg, &mut stream(1, &[])).unwrap();
        assert_eq!(a.samples.len(), 1);
        assert!((a.loss.item() - 0.5).abs() < 1e-12);

        let mut satisfied = rows.clone();
        satisfied[2] = satisfied[0].clone();
        satisfied[1] = vec![0.0, 3.0, 0.0, 0.0];
        satisfied[4] = vec![0.0, 0.0, 3.0, 0.0];
        let h_k = tape.constant(Tensor::from_rows(&satisfied).unwrap());
        assert_eq!(m.alignment_loss(&tape, h_k, &kg, &mut stream(1, &[])).unwrap().loss.item(), 0.0);

        let again = m.alignment_loss(&tape, h_k, &kg, &mut stream(9, &[])).unwrap();
        let again2 = m.alignment_loss(&tape, h_k, &kg, &mut stream(9, &[])).unwrap();
        assert_eq!(again.samples, again2.samples);
    }

    #[test]
    fn alignment_skips_without_images_and_needs_two_texts() {
        use crate::graph::{build_graph, Entity, Relation, Triple, IMAGE_OF};
        let cfg = small();
        let tape = Tape::new();
        let m = Model::new(cfg, 0).unwrap();
        let g = build_graph([Entity::text(0, "a"), Entity::text(1, "b")], [Relation::new(0, "on")], [Triple::new(0, 0, 1)]).unwrap();
        let kg = KnowledgeGraph::from_graph(&g, &EmbeddingStore::pseudo(&g, 4, 0).unwrap()).unwrap();
        let h = tape.constant(Tensor::zeros(&[2, 4]));
        let a = m.alignment_loss(&tape, h, &kg, &mut stream(0, &[])).unwrap();
        assert!(a.skipped && a.loss.item() == 0.0);

        let g = build_graph(
            [Entity::text(0, "a"), Entity::image(1, "a", "k")],
            [Relation::new(0, IMAGE_OF)],
            [Triple::new(1, 0, 0)],
        )
        .unwrap();
        let kg = KnowledgeGraph::from_graph(&g, &EmbeddingStore::pseudo(&g, 4, 0).unwrap()).unwrap();
        let h = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(m.alignment_loss(&tape, h, &kg, &mut stream(0, &[])), Err(ModelError::InsufficientTextEntities(1))));
    }

    #[test]
    fn total_loss_reduction() {
        let tape = Tape::new();
        let g = tape.constant(Tensor::scalar(2.0));
        let a = tape.constant(Tensor::scalar(0.5));
        assert_eq!(total_loss(g, a, 1.0).unwrap().item(), 2.5);
        assert_eq!(total_loss(g, a, 0.0).unwrap().item().to_bits(), 2.0f64.to_bits());
    }

    #[test]
    fn single_node_graph_pools_to_its_projection() {
        use crate::graph::{build_graph, Entity};
        let cfg = small();
        let g = build_graph([Entity::text(0, "cup")], [], []).unwrap();
        let kg = KnowledgeGraph::from_graph(&g, &EmbeddingStore::pseudo(&g, 4, 0).unwrap()).unwrap();
        let m = Model::new(cfg, 2).unwrap();
        let tape = Tape::new();
        let q = m.embed_tokens(&tape, &[2, 3, 4]).unwrap();
        let (pooled, nodes) = m.encode_knowledge(&tape, &kg, q).unwrap();
        let (pooled, nodes) = (pooled.value(), nodes.value());
        for r in 0..3 {
            assert_eq!(pooled.row(r), nodes.row(0));
        }
    }

    #[test]
    fn ranking_ties_break_by_id() {
        let cfg = ModelConfig { use_kg: false, use_mmkg: false, use_alignment: false, ..small() };
        let m = Model::new(cfg, 0).unwrap();
        let i = PreparedInstance { question: vec![2], image: None, answer: vec![3], knowledge: None };
        let r = m.rank_candidates(&i, &[(EntityId(9), vec![3]), (EntityId(4), vec![3])], Some(EntityId(9))).unwrap();
        assert_eq!(r.order[0].0, EntityId(4));
        assert_eq!(r.gold_rank, Some(2));
        let one = m.rank_candidates(&i, &[(EntityId(9), vec![5])], Some(EntityId(9))).unwrap();
        assert_eq!(one.gold_rank, Some(1));
        assert!(matches!(m.rank_candidates(&i, &[], None), Err(ModelError::EmptyCandidates)));
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        for kind in [GraphLayerKind::Rgat, GraphLayerKind::Gat, GraphLayerKind::Gnn] {
            let cfg = ModelConfig { kge_kind: kind, alpha: 3.0, ..small() };
            let kg = kg_fixture(&cfg);
            let mut m = model_with(cfg, &kg);
            let i = inst(kg);
            let r = finite_diff_check(&mut m, 1e-4, |tape, m: &Model| Ok::<_, ModelError>(m.forward(tape, &i, 5)?.total))
                .unwrap();
            assert!(r.max_rel_error < 1e-4, "{kind:?}: {r:?}");
            assert!(r.checked > 50);
        }
    }
}
