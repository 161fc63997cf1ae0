use crate::model::{ModelError, ModelParams};

use super::{accumulate_batch_gradient, batch_loss, LaceBatch, TrainingConfig};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter tensor and flat index of the worst coordinate.
    pub worst: Option<(&'static str, usize)>,
    /// Whether the consistency term was part of the checked objective.
    pub consistency_used: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`, zero when both are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference check of every trainable parameter of the batch
/// objective. The adaptive switch is evaluated at the unperturbed point and
/// held fixed, so the checked function is smooth.
pub fn check_batch_gradient(
    batch: &LaceBatch<'_>,
    params: &ModelParams,
    cfg: &TrainingConfig,
    epsilon: f64,
    floor: f64,
) -> Result<GradientCheck, ModelError> {
    let mut analytic = params.clone();
    analytic.zero_grads();
    let base = accumulate_batch_gradient(batch, &mut analytic, cfg)?;
    let consistency_used = base.consistency.is_some();
    let fixed = TrainingConfig {
        consistency_enabled: consistency_used,
        sup_threshold: if consistency_used {
            f64::INFINITY
        } else {
            cfg.sup_threshold
        },
        ..*cfg
    };

    let mut probe = params.clone();
    let mut checked = 0;
    let mut max_relative_error = 0.0;
    let mut worst = None;
    let grads: Vec<(&'static str, Option<Vec<f64>>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.grad().map(<[f64]>::to_vec)))
        .collect();
    for (k, (name, grad)) in grads.into_iter().enumerate() {
        if name == "embedding" && !params.embedding_trainable {
            continue;
        }
        let len = params.tensors()[k].1.len();
        for idx in 0..len {
            let a = grad.as_ref().map_or(0.0, |g| g[idx]);
            let original = probe.tensors()[k].1.values()[idx];
            probe.tensors_mut()[k].1.values_mut()[idx] = original + epsilon;
            let plus = batch_loss(batch, &probe, &fixed)?.total;
            probe.tensors_mut()[k].1.values_mut()[idx] = original - epsilon;
            let minus = batch_loss(batch, &probe, &fixed)?.total;
            probe.tensors_mut()[k].1.values_mut()[idx] = original;
            let n = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(a, n, floor);
            if worst.is_none() || err > max_relative_error {
                max_relative_error = err;
                worst = Some((name, idx));
            }
            checked += 1;
        }
    }
    Ok(GradientCheck {
        checked,
        max_relative_error,
        worst,
        consistency_used,
    })
}
