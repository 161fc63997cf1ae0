//! Shared fixtures for the benchmarks.

use lace_core::corpus::Vocabulary;
use lace_core::{generate_synthetic, ModelDims, ModelParams, TopicGroup, TrainingConfig};

/// A synthetic corpus with one paragraph per topic demoted to unlabeled.
pub fn corpus(topics: usize, paragraphs: usize) -> Vec<TopicGroup> {
    let mut groups = generate_synthetic(42, topics, paragraphs, 0.15);
    for g in &mut groups {
        if g.labeled.len() > 1 {
            let mut ex = g.labeled.pop().expect("non-empty");
            ex.gold = None;
            g.unlabeled.push(ex);
        }
    }
    groups
}

/// Randomly initialized parameters covering every token of `groups`.
pub fn params(groups: &[TopicGroup], cfg: &TrainingConfig) -> ModelParams {
    let vocab = Vocabulary::from_examples(groups.iter().flat_map(TopicGroup::members));
    let dims = ModelDims::new(cfg.embedding_dim, cfg.hidden_size).expect("valid dims");
    ModelParams::init(dims, vocab, cfg.seed)
}
