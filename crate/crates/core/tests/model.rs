use mrmkg::model::{ModelConfig, Prompt, Vocab};
use mrmkg::nn::Tape;
use mrmkg::train::synthetic::{generate, synthetic_retrieval, SyntheticConfig};
use mrmkg::train::{extend_vocab, prepare, pretrain, TrainConfig};

fn trained(n: usize, epochs: usize, model: ModelConfig) -> (mrmkg::model::Model, Vec<mrmkg::train::Example>) {
    let d = generate(&SyntheticConfig::new(n, 41)).unwrap();
    let mut vocab = Vocab::new();
    extend_vocab(&mut vocab, &d).unwrap();
    let cfg = TrainConfig { epochs, seed: 41, retrieval: synthetic_retrieval(), model, ..TrainConfig::default() };
    let run = pretrain(&d, &vocab, &cfg).unwrap();
    let examples = prepare(&d, &vocab, &model, &cfg.retrieval).unwrap();
    (run.model, examples)
}

#[test]
fn reordering_prompt_sections_changes_the_generation_loss() {
    let (model, examples) = trained(12, 10, ModelConfig::default());
    let mut changed = 0;
    for ex in &examples {
        let tape = Tape::new();
        let (prompt, _) = model.prompt(&tape, &ex.input).unwrap();
        let (k, i, t) = prompt.lens;
        assert_eq!(prompt.matrix.shape()[0], k + i + t);
        // Text first, then visual, then knowledge.
        let order: Vec<usize> = (k + i..k + i + t).chain(k..k + i).chain(0..k).collect();
        let swapped = Prompt { matrix: prompt.matrix.gather_rows(&order).unwrap(), lens: (t, i, k) };
        let a = model.generation_loss(&tape, &prompt, &ex.input.answer).unwrap().item();
        let b = model.generation_loss(&tape, &swapped, &ex.input.answer).unwrap().item();
        changed += (a != b) as usize;
    }
    assert!(changed > 0);
}

#[test]
fn without_alignment_the_loss_is_the_generation_loss() {
    let cfg = ModelConfig { use_alignment: false, ..ModelConfig::default() };
    let (model, examples) = trained(4, 1, cfg);
    for (s, ex) in examples.iter().enumerate() {
        let tape = Tape::new();
        let parts = model.forward(&tape, &ex.input, s as u64).unwrap();
        assert!(parts.alignment_skipped);
        assert_eq!(parts.total.item().to_bits(), parts.generation.item().to_bits());
    }
}

#[test]
fn without_the_graph_the_knowledge_section_is_absent() {
    let cfg = ModelConfig { use_kg: false, use_mmkg: false, use_alignment: false, ..ModelConfig::default() };
    let (model, examples) = trained(4, 1, cfg);
    for ex in &examples {
        assert!(ex.input.knowledge.is_none());
        let tape = Tape::new();
        let (prompt, h_k) = model.prompt(&tape, &ex.input).unwrap();
        assert_eq!(prompt.lens.0, 0);
        assert!(h_k.is_none());
    }
}
