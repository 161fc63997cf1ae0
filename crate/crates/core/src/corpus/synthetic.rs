//! Seeded generator of templated procedural paragraphs.
//!
//! Each topic draws a hidden per-entity summary (a non-empty subset of
//! Move/Create/Destroy). Every paragraph of the topic realizes that summary
//! as one sentence per event, with its own event order, verb synonyms and
//! filler words. With probability `noise` a paragraph swaps one change of one
//! entity for a change it did not have, so its summary disagrees with the
//! rest of the topic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Entity, LabelGrid, Mention, ProcessExample, StateChange, TopicGroup};

const ENTITIES: &[&str] = &[
    "water",
    "oxygen",
    "sugar",
    "carbon dioxide",
    "light",
    "seed",
    "root",
    "energy",
    "glucose",
    "sediment",
    "rock",
    "magma",
    "ice",
    "vapor",
    "cloud",
    "rain",
    "soil",
    "nutrient",
    "mineral",
    "egg",
    "larva",
    "pupa",
    "flour",
    "dough",
    "batter",
    "heat",
    "steam",
    "gas",
    "pollen",
    "spore",
];

const PLACES: &[&str] = &[
    "leaf", "stem", "ground", "air", "river", "ocean", "cell", "bowl", "oven", "surface",
];

const PREFIXES: &[&[&str]] = &[&[], &["then"], &["next"], &["after", "that"], &["finally"]];

// Synonyms are drawn with decreasing weight so the tail ones are rare.
const VERB_WEIGHTS: &[u32] = &[8, 4, 2, 1, 1, 1];
const MOVE_VERBS: &[&str] = &["moves", "travels", "flows", "goes", "passes", "enters"];
const CREATE_VERBS: &[&str] = &[
    "forms", "appears", "develops", "emerges", "arises", "builds",
];
const DESTROY_VERBS: &[&str] = &[
    "disappears",
    "breaks",
    "dissolves",
    "vanishes",
    "decays",
    "burns",
];

const CHANGES: [StateChange; 3] = [StateChange::Create, StateChange::Move, StateChange::Destroy];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub topics: usize,
    pub paragraphs_per_topic: usize,
    /// Probability in `[0, 1]` that a paragraph perturbs one entity summary.
    pub noise: f64,
    pub max_steps: usize,
    pub max_entities: usize,
}

impl SyntheticConfig {
    pub fn new(seed: u64, topics: usize, paragraphs_per_topic: usize, noise: f64) -> Self {
        SyntheticConfig {
            seed,
            topics,
            paragraphs_per_topic,
            noise,
            max_steps: 4,
            max_entities: 3,
        }
    }

    pub fn generate(&self) -> Vec<TopicGroup> {
        assert!(
            self.topics >= 1 && self.paragraphs_per_topic >= 1,
            "counts must be >= 1"
        );
        assert!(
            self.max_steps >= 1 && self.max_entities >= 1,
            "limits must be >= 1"
        );
        assert!(
            (0.0..=1.0).contains(&self.noise),
            "noise must lie in [0, 1]"
        );
        (0..self.topics)
            .map(|k| {
                // one stream per topic: hidden summaries do not depend on noise
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(k as u64);
                self.topic(&mut rng, k)
            })
            .collect()
    }

    fn topic(&self, rng: &mut ChaCha8Rng, k: usize) -> TopicGroup {
        let name = format!("process-{k:03}");
        let n_entities = rng
            .gen_range(2..=3)
            .min(self.max_entities)
            .min(self.max_steps);
        let names: Vec<&str> = ENTITIES.choose_multiple(rng, n_entities).copied().collect();
        let mut summary: Vec<Vec<StateChange>> = (0..n_entities)
            .map(|_| vec![*CHANGES.choose(rng).unwrap()])
            .collect();
        let mut events = n_entities;
        while events < self.max_steps && rng.gen_bool(0.5) {
            let j = rng.gen_range(0..n_entities);
            let missing: Vec<StateChange> = CHANGES
                .iter()
                .copied()
                .filter(|c| !summary[j].contains(c))
                .collect();
            if let Some(&c) = missing.choose(rng) {
                summary[j].push(c);
                events += 1;
            }
        }

        let mut group = TopicGroup::new(name.clone());
        for p in 0..self.paragraphs_per_topic {
            let mut own = summary.clone();
            if rng.gen_bool(self.noise) {
                perturb(rng, &mut own);
            }
            group.push(realize(rng, format!("{name}-p{p}"), &name, &names, &own));
        }
        group
    }
}

pub fn generate_synthetic(
    seed: u64,
    topics: usize,
    paragraphs_per_topic: usize,
    noise: f64,
) -> Vec<TopicGroup> {
    SyntheticConfig::new(seed, topics, paragraphs_per_topic, noise).generate()
}

fn perturb(rng: &mut ChaCha8Rng, summary: &mut [Vec<StateChange>]) {
    let j = rng.gen_range(0..summary.len());
    let slot = rng.gen_range(0..summary[j].len());
    let replacement: Vec<StateChange> = CHANGES
        .iter()
        .copied()
        .filter(|c| !summary[j].contains(c))
        .collect();
    match replacement.choose(rng) {
        Some(&c) => summary[j][slot] = c,
        // all three changes present: dropping one is the only perturbation
        None => {
            summary[j].remove(slot);
        }
    }
}

fn pick_verb(rng: &mut ChaCha8Rng, change: StateChange) -> &'static str {
    let pool = match change {
        StateChange::Move => MOVE_VERBS,
        StateChange::Create => CREATE_VERBS,
        StateChange::Destroy => DESTROY_VERBS,
        StateChange::None => unreachable!("None is never an event"),
    };
    let total: u32 = VERB_WEIGHTS.iter().sum();
    let mut roll = rng.gen_range(0..total);
    for (verb, &w) in pool.iter().zip(VERB_WEIGHTS) {
        if roll < w {
            return verb;
        }
        roll -= w;
    }
    pool[0]
}

fn realize(
    rng: &mut ChaCha8Rng,
    id: String,
    topic: &str,
    names: &[&str],
    summary: &[Vec<StateChange>],
) -> ProcessExample {
    // Create before Move before Destroy within an entity; entities interleave.
    let mut queues: Vec<Vec<StateChange>> = summary
        .iter()
        .map(|s| {
            let mut q: Vec<StateChange> =
                CHANGES.iter().copied().filter(|c| s.contains(c)).collect();
            q.reverse();
            q
        })
        .collect();
    let mut events = Vec::new();
    loop {
        let open: Vec<usize> = (0..queues.len())
            .filter(|&j| !queues[j].is_empty())
            .collect();
        let Some(&j) = open.choose(rng) else { break };
        events.push((j, queues[j].pop().unwrap()));
    }

    let mut steps = Vec::with_capacity(events.len());
    let mut mentions: Vec<Vec<Mention>> = vec![Vec::new(); names.len()];
    let mut verbs = Vec::new();
    let mut gold = LabelGrid::filled(events.len(), names.len(), StateChange::None);
    for (t, &(j, change)) in events.iter().enumerate() {
        let mut tokens: Vec<String> = PREFIXES
            .choose(rng)
            .unwrap()
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut mention = |tokens: &mut Vec<String>, who: usize| {
            tokens.push("the".into());
            let start = tokens.len();
            tokens.extend(names[who].split(' ').map(String::from));
            mentions[who].push(Mention {
                step: t,
                start,
                end: tokens.len(),
            });
        };
        mention(&mut tokens, j);
        verbs.push((t, tokens.len()));
        tokens.push(pick_verb(rng, change).into());
        match change {
            StateChange::Move => {
                tokens.push("to".into());
                let others: Vec<usize> = (0..names.len()).filter(|&o| o != j).collect();
                match others.choose(rng) {
                    Some(&o) if rng.gen_bool(0.25) => mention(&mut tokens, o),
                    _ => {
                        tokens.push("the".into());
                        tokens.push(PLACES.choose(rng).unwrap().to_string());
                    }
                }
            }
            StateChange::Create if rng.gen_bool(0.5) => {
                tokens.push("in".into());
                tokens.push("the".into());
                tokens.push(PLACES.choose(rng).unwrap().to_string());
            }
            _ => {}
        }
        gold.set(t, j, change);
        steps.push(tokens);
    }

    ProcessExample {
        id,
        topic: topic.to_string(),
        steps,
        entities: names
            .iter()
            .zip(mentions)
            .map(|(name, mentions)| Entity {
                name: name.to_string(),
                mentions,
            })
            .collect(),
        verbs,
        gold: Some(gold),
    }
}
