use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use lace_core::{TopicGroup, TrainingConfig};

use crate::error::CliError;

/// Everything a `train` run needs. Read from a TOML file, then overridden by
/// command-line flags; the effective value of every field is written to the
/// training report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lambda: f64,
    pub sup_threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_size: usize,
    pub embedding_dim: usize,
    pub consistency_enabled: bool,
    pub clip_norm: Option<f64>,
    /// Share of each topic's labeled paragraphs that keep their labels.
    pub label_fraction: f64,
    /// Keep demoted paragraphs as unlabeled group members instead of
    /// dropping them.
    pub use_unlabeled: bool,
    /// Fine-tune loaded embeddings rather than freezing them.
    pub train_embeddings: bool,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_training(&TrainingConfig::default())
    }
}

impl RunConfig {
    pub fn from_training(t: &TrainingConfig) -> Self {
        RunConfig {
            lambda: t.lambda,
            sup_threshold: t.sup_threshold,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            seed: t.seed,
            hidden_size: t.hidden_size,
            embedding_dim: t.embedding_dim,
            consistency_enabled: t.consistency_enabled,
            clip_norm: t.clip_norm,
            label_fraction: 1.0,
            use_unlabeled: false,
            train_embeddings: false,
            train: None,
            dev: None,
            test: None,
            embeddings: None,
            checkpoint: None,
            report: None,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            lambda: self.lambda,
            sup_threshold: self.sup_threshold,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
            hidden_size: self.hidden_size,
            embedding_dim: self.embedding_dim,
            consistency_enabled: self.consistency_enabled,
            clip_norm: self.clip_norm,
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks value ranges and path existence before any work starts.
    pub fn validate_for_training(&self) -> Result<(), CliError> {
        self.training().validate()?;
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "label_fraction must lie in (0, 1], got {}",
                self.label_fraction
            )));
        }
        let train = self
            .train
            .as_deref()
            .ok_or_else(|| CliError::Config("no training corpus given (--train)".into()))?;
        require_file(train)?;
        for p in [&self.dev, &self.test, &self.embeddings]
            .into_iter()
            .flatten()
        {
            require_file(p)?;
        }
        let checkpoint = self
            .checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Config("no checkpoint path given (--checkpoint)".into()))?;
        require_writable(checkpoint)?;
        if let Some(r) = &self.report {
            require_writable(r)?;
        }
        Ok(())
    }
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "no such file: {}",
            path.display()
        )))
    }
}

/// The parent directory of an output path must already exist.
pub fn require_writable(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::Config(
            format!("output directory does not exist: {}", dir.display()),
        )),
        _ if path.is_dir() => Err(CliError::Config(format!(
            "output path is a directory: {}",
            path.display()
        ))),
        _ => Ok(()),
    }
}

/// Flags shared by every command that trains.
#[derive(Args, Clone, Debug, Default)]
pub struct TrainingFlags {
    /// Random seed for initialization, shuffling and label demotion.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of labeled paragraphs kept per topic, in (0, 1].
    #[arg(long)]
    pub label_fraction: Option<f64>,
    /// Keep demoted paragraphs as unlabeled members.
    #[arg(long)]
    pub use_unlabeled: bool,
    /// Disable the consistency loss (the λ = 1 arm).
    #[arg(long)]
    pub no_consistency: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sup_threshold: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub emb_dim: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Pretrained vectors in whitespace-separated text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Fine-tune loaded embeddings instead of freezing them.
    #[arg(long)]
    pub train_embeddings: bool,
}

impl TrainingFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.label_fraction, &self.label_fraction);
        set(&mut cfg.lambda, &self.lambda);
        set(&mut cfg.sup_threshold, &self.sup_threshold);
        set(&mut cfg.epochs, &self.epochs);
        set(&mut cfg.learning_rate, &self.lr);
        set(&mut cfg.hidden_size, &self.hidden);
        set(&mut cfg.embedding_dim, &self.emb_dim);
        if self.clip_norm.is_some() {
            cfg.clip_norm = self.clip_norm;
        }
        if self.embeddings.is_some() {
            cfg.embeddings.clone_from(&self.embeddings);
        }
        if self.use_unlabeled {
            cfg.use_unlabeled = true;
        }
        if self.no_consistency {
            cfg.consistency_enabled = false;
        }
        if self.train_embeddings {
            cfg.train_embeddings = true;
        }
    }
}

/// How many paragraphs kept, demoted to unlabeled, or dropped their labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSplit {
    pub labeled: usize,
    pub unlabeled: usize,
    pub dropped: usize,
}

/// Keeps `round(fraction · m)` (at least one) of each topic's `m` labeled
/// paragraphs, chosen by a seeded shuffle. The rest lose their labels and are
/// kept as unlabeled members when `use_unlabeled`, dropped otherwise.
pub fn apply_label_fraction(
    groups: &[TopicGroup],
    fraction: f64,
    use_unlabeled: bool,
    seed: u64,
) -> (Vec<TopicGroup>, LabelSplit) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut split = LabelSplit::default();
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let m = g.labeled.len();
        let keep = if m == 0 {
            0
        } else {
            ((fraction * m as f64).round() as usize).clamp(1, m)
        };
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let kept: BTreeSet<usize> = order[..keep].iter().copied().collect();

        let mut group = TopicGroup::new(g.topic.clone());
        let mut demoted = Vec::new();
        for (i, ex) in g.labeled.iter().enumerate() {
            if kept.contains(&i) {
                group.labeled.push(ex.clone());
            } else if use_unlabeled {
                let mut ex = ex.clone();
                ex.gold = None;
                demoted.push(ex);
            } else {
                split.dropped += 1;
            }
        }
        group.unlabeled = demoted;
        group.unlabeled.extend(g.unlabeled.iter().cloned());
        split.labeled += group.labeled.len();
        split.unlabeled += group.unlabeled.len();
        out.push(group);
    }
    (out, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lace_core::generate_synthetic;

    #[test]
    fn defaults_mirror_training_config() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.training(), TrainingConfig::default());
        assert_eq!(cfg.label_fraction, 1.0);
        assert!(!cfg.use_unlabeled);
    }

    #[test]
    fn toml_overrides_and_rejects_unknown_keys() {
        let cfg: RunConfig =
            toml::from_str("lambda = 0.5\nepochs = 7\ntrain = \"a.jsonl\"").unwrap();
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.sup_threshold, 0.2);
        assert_eq!(cfg.train.as_deref(), Some(Path::new("a.jsonl")));
        assert!(toml::from_str::<RunConfig>("lamda = 0.5").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let mut cfg: RunConfig = toml::from_str("lambda = 0.5\nseed = 3").unwrap();
        let flags = TrainingFlags {
            lambda: Some(0.25),
            no_consistency: true,
            ..Default::default()
        };
        flags.apply(&mut cfg);
        assert_eq!(cfg.lambda, 0.25);
        assert_eq!(cfg.seed, 3);
        assert!(!cfg.consistency_enabled);
    }

    #[test]
    fn third_of_three_keeps_one() {
        let groups = generate_synthetic(1, 4, 3, 0.0);
        let (kept, split) = apply_label_fraction(&groups, 0.33, false, 5);
        assert!(kept
            .iter()
            .all(|g| g.labeled.len() == 1 && g.unlabeled.is_empty()));
        assert_eq!(
            split,
            LabelSplit {
                labeled: 4,
                unlabeled: 0,
                dropped: 8
            }
        );

        let (reused, split) = apply_label_fraction(&groups, 0.33, true, 5);
        assert!(reused
            .iter()
            .all(|g| g.labeled.len() == 1 && g.unlabeled.len() == 2));
        assert!(reused
            .iter()
            .flat_map(|g| &g.unlabeled)
            .all(|e| e.gold.is_none()));
        assert_eq!(
            split,
            LabelSplit {
                labeled: 4,
                unlabeled: 8,
                dropped: 0
            }
        );
        // the same paragraphs keep their labels in both modes
        for (a, b) in kept.iter().zip(&reused) {
            assert_eq!(a.labeled, b.labeled);
        }
    }

    #[test]
    fn tiny_fraction_still_keeps_one_per_topic() {
        let groups = generate_synthetic(2, 3, 4, 0.0);
        let (kept, _) = apply_label_fraction(&groups, 0.01, false, 0);
        assert!(kept.iter().all(|g| g.labeled.len() == 1));
        let (all, split) = apply_label_fraction(&groups, 1.0, false, 0);
        assert_eq!(all, groups);
        assert_eq!(split.dropped, 0);
    }

    #[test]
    fn demotion_is_seeded() {
        let groups = generate_synthetic(3, 6, 3, 0.0);
        let a = apply_label_fraction(&groups, 0.33, true, 11);
        let b = apply_label_fraction(&groups, 0.33, true, 11);
        assert_eq!(a, b);
        let ids = |gs: &[TopicGroup]| -> Vec<String> {
            gs.iter().map(|g| g.labeled[0].id.clone()).collect()
        };
        let others: Vec<_> = (0..10)
            .map(|s| ids(&apply_label_fraction(&groups, 0.33, true, s).0))
            .collect();
        assert!(others.iter().any(|o| *o != ids(&a.0)));
    }
}
