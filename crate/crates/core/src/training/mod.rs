//! Group batching, joint supervised + consistency objective and the
//! optimization loop.

mod batching;
mod gradcheck;
mod loss;

pub use batching::{make_batches, LaceBatch};
pub use gradcheck::{check_batch_gradient, relative_error, GradientCheck};
pub use loss::{
    accumulate_batch_gradient, batch_loss, batch_loss_on_tape, combine_losses, consistency_active,
    consistency_loss, joint_loss, summarize, LossBreakdown,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TopicGroup, Vocabulary};
use crate::evaluation::{evaluate, EvalError};
use crate::model::{ModelDims, ModelError, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Weight of the supervised term once the consistency term is active.
    pub lambda: f64,
    /// Batches whose supervised loss exceeds this ignore consistency.
    pub sup_threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_size: usize,
    pub embedding_dim: usize,
    pub consistency_enabled: bool,
    /// Optional rescaling of the gradient to this Euclidean norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 0.05,
            sup_threshold: 0.2,
            learning_rate: 0.1,
            epochs: 50,
            seed: 0,
            hidden_size: 8,
            embedding_dim: 16,
            consistency_enabled: true,
            clip_norm: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.sup_threshold.is_nan() || self.sup_threshold < 0.0 {
            return bad(format!(
                "sup_threshold must be >= 0, got {}",
                self.sup_threshold
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        ModelDims::new(self.embedding_dim, self.hidden_size)
            .map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn dims(&self) -> Result<ModelDims, ModelError> {
        ModelDims::new(self.embedding_dim, self.hidden_size)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no labeled examples to train on")]
    NoLabeledData,
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (topic {topic:?}): \
         supervised {supervised}, consistency {consistency:?}, total {total}"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        topic: String,
        supervised: f64,
        consistency: Option<f64>,
        total: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_sup_loss: f64,
    /// Mean summed consistency loss over batches where the term was used
    /// (zero when it was never used this epoch).
    pub mean_con_loss: f64,
    /// Fraction of batches whose supervised loss exceeded the threshold, so
    /// that the consistency term was dropped.
    pub adaptive_switch_rate: f64,
    pub dev_f1: Option<f64>,
    pub dev_consistency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainingConfig,
    pub batches_per_epoch: usize,
    pub skipped_groups: usize,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub best_dev_f1: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Trains a randomly initialized model whose vocabulary covers every token
/// of `groups`.
pub fn train(
    groups: &[TopicGroup],
    cfg: &TrainingConfig,
    dev: &[TopicGroup],
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let vocab = Vocabulary::from_examples(groups.iter().flat_map(TopicGroup::members));
    let params = ModelParams::init(cfg.dims()?, vocab, cfg.seed);
    train_from(params, groups, cfg, dev)
}

/// Runs `cfg.epochs` passes of adaptive joint-loss SGD over all batches.
///
/// Group order is reshuffled every epoch from `cfg.seed`; batch order within
/// a group is fixed. After each epoch the model is scored on `dev` and the
/// parameters with the best dev F1 are returned (the final ones when `dev`
/// is empty).
pub fn train_from(
    mut params: ModelParams,
    groups: &[TopicGroup],
    cfg: &TrainingConfig,
    dev: &[TopicGroup],
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if params.dims.hidden_size != cfg.hidden_size {
        return Err(TrainError::Config(format!(
            "model hidden size {} differs from configured {}",
            params.dims.hidden_size, cfg.hidden_size
        )));
    }
    let mut skipped_groups = 0;
    let mut batched: Vec<Vec<LaceBatch<'_>>> = Vec::new();
    for group in groups {
        let batches = make_batches(group);
        if batches.is_empty() {
            log::warn!("skipping topic {:?}: no labeled paragraphs", group.topic);
            skipped_groups += 1;
        } else {
            batched.push(batches);
        }
    }
    if batched.is_empty() {
        return Err(TrainError::NoLabeledData);
    }
    let batches_per_epoch = batched.iter().map(Vec::len).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..batched.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sup_sum = 0.0;
        let mut con_sum = 0.0;
        let mut con_batches = 0usize;
        let mut switched = 0usize;
        let mut batch_no = 0;
        for &g in &order {
            for batch in &batched[g] {
                let b = accumulate_batch_gradient(batch, &mut params, cfg)?;
                if !b.total.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch: batch_no,
                        topic: batch.group.topic.clone(),
                        supervised: b.supervised,
                        consistency: b.consistency,
                        total: b.total,
                    });
                }
                if let Some(max) = cfg.clip_norm {
                    let norm = params.grad_norm();
                    if norm > max {
                        params.scale_grads(max / norm);
                    }
                }
                params.sgd_step(cfg.learning_rate);
                sup_sum += b.supervised;
                if let Some(c) = b.consistency {
                    con_sum += c;
                    con_batches += 1;
                }
                switched += b.above_threshold as usize;
                batch_no += 1;
            }
        }

        let (dev_f1, dev_consistency) = if dev.is_empty() {
            (None, None)
        } else {
            let r = evaluate(&params, dev)?;
            (Some(r.metrics.f1), r.consistency_score)
        };
        let record = EpochRecord {
            epoch,
            mean_sup_loss: sup_sum / batch_no as f64,
            mean_con_loss: if con_batches == 0 {
                0.0
            } else {
                con_sum / con_batches as f64
            },
            adaptive_switch_rate: switched as f64 / batch_no as f64,
            dev_f1,
            dev_consistency,
        };
        log::info!(
            "epoch {epoch}: sup {:.4} con {:.5} switch {:.2} dev_f1 {:?}",
            record.mean_sup_loss,
            record.mean_con_loss,
            record.adaptive_switch_rate,
            record.dev_f1
        );
        records.push(record);

        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
                best = Some((epoch, f1, params.clone()));
            }
        }
    }

    let (best_epoch, best_dev_f1, params) = match best {
        Some((e, f1, p)) => (e, Some(f1), p),
        None => (cfg.epochs, None, params),
    };
    Ok(TrainOutcome {
        params,
        report: TrainReport {
            config: *cfg,
            batches_per_epoch,
            skipped_groups,
            best_epoch,
            best_dev_f1,
            epochs: records,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        for bad in [
            TrainingConfig {
                lambda: 1.5,
                ..Default::default()
            },
            TrainingConfig {
                sup_threshold: -0.1,
                ..Default::default()
            },
            TrainingConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainingConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainingConfig {
                hidden_size: 7,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn unlabeled_groups_are_skipped() {
        let mut groups = generate_synthetic(1, 2, 2, 0.0);
        let stripped: Vec<_> = groups[1]
            .labeled
            .drain(..)
            .map(|mut e| {
                e.gold = None;
                e
            })
            .collect();
        groups[1].unlabeled = stripped;
        let cfg = TrainingConfig {
            epochs: 1,
            hidden_size: 4,
            embedding_dim: 4,
            ..Default::default()
        };
        let out = train(&groups, &cfg, &[]).unwrap();
        assert_eq!(out.report.skipped_groups, 1);
        assert_eq!(out.report.batches_per_epoch, 2);
    }

    #[test]
    fn no_labels_is_an_error() {
        let mut groups = generate_synthetic(1, 1, 2, 0.0);
        for e in &mut groups[0].labeled {
            e.gold = None;
        }
        let g = &mut groups[0];
        g.unlabeled = std::mem::take(&mut g.labeled);
        let cfg = TrainingConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            train(&groups, &cfg, &[]),
            Err(TrainError::NoLabeledData)
        ));
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        let groups = generate_synthetic(2, 2, 2, 0.0);
        let cfg = TrainingConfig {
            epochs: 5,
            learning_rate: 1e300,
            hidden_size: 4,
            embedding_dim: 4,
            ..Default::default()
        };
        match train(&groups, &cfg, &[]) {
            Err(TrainError::NonFinite { epoch, .. }) => assert!(epoch >= 1),
            other => panic!(
                "expected non-finite failure, got {:?}",
                other.map(|o| o.report)
            ),
        }
    }
}
