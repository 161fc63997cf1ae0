//! Supervised, consistency and adaptive joint losses.

use crate::autodiff::{Tape, Var};
use crate::corpus::{shared_entities, Distribution, DistributionGrid, LabelGrid, ProcessExample};
use crate::model::{grid_on_tape, BoundParams, ModelError, ModelParams};

use super::{LaceBatch, TrainingConfig};

/// Mean of an entity's per-step distributions. Each step sums to one, so
/// dividing by the number of steps normalizes the sum.
pub fn summarize(grid: &DistributionGrid, entity: usize) -> Distribution {
    let mut out = [0.0; 4];
    for dist in grid.column(entity) {
        for (o, p) in out.iter_mut().zip(dist) {
            *o += p;
        }
    }
    let steps = grid.rows() as f64;
    out.map(|v| v / steps)
}

fn mse(a: &Distribution, b: &Distribution) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 4.0
}

/// Mean over shared entities of the squared-error distance between their
/// summaries; zero when no entity is shared.
pub fn consistency_loss(
    pred_i: &DistributionGrid,
    example_i: &ProcessExample,
    pred_primary: &DistributionGrid,
    example_primary: &ProcessExample,
) -> f64 {
    let pairs = shared_entities(example_i, example_primary);
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|&(i, p)| mse(&summarize(pred_i, i), &summarize(pred_primary, p)))
        .sum();
    total / pairs.len() as f64
}

/// Whether the consistency term is used for a batch with supervised loss
/// `sup`: it is dropped when disabled or when `sup` exceeds the threshold.
pub fn consistency_active(sup: f64, cfg: &TrainingConfig) -> bool {
    cfg.consistency_enabled && sup <= cfg.sup_threshold
}

/// `λ·sup + (1 − λ)·con_sum`.
pub fn joint_loss(sup: f64, con_sum: f64, lambda: f64) -> f64 {
    lambda * sup + (1.0 - lambda) * con_sum
}

/// Adaptive batch objective from already computed components.
pub fn combine_losses(sup: f64, con_sum: f64, cfg: &TrainingConfig) -> f64 {
    if consistency_active(sup, cfg) {
        joint_loss(sup, con_sum, cfg.lambda)
    } else {
        sup
    }
}

/// Components of one batch objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub supervised: f64,
    /// Sum of consistency losses against the primary; `None` when the term
    /// was not evaluated for this batch.
    pub consistency: Option<f64>,
    /// The supervised loss exceeded the threshold, forcing `λ = 1`.
    pub above_threshold: bool,
}

/// Mean negative log-likelihood of the gold label over all cells.
fn supervised_on_tape(tape: &mut Tape, cells: &[Var], gold: &LabelGrid) -> Result<Var, ModelError> {
    let mut nll = Vec::with_capacity(cells.len());
    for (&probs, label) in cells.iter().zip(gold.cells()) {
        let p = tape.pick(probs, label.index())?;
        nll.push(tape.log(p));
    }
    let stacked = tape.concat_cols(&nll)?;
    let mean = tape.mean(stacked)?;
    Ok(tape.scale(mean, -1.0))
}

fn summary_on_tape(
    tape: &mut Tape,
    cells: &[Var],
    example: &ProcessExample,
    entity: usize,
) -> Result<Var, ModelError> {
    let cols = example.num_entities();
    let column: Vec<Var> = (0..example.num_steps())
        .map(|t| cells[t * cols + entity])
        .collect();
    let stacked = tape.concat_rows(&column)?;
    Ok(tape.mean_rows(stacked, &(0..column.len()).collect::<Vec<_>>())?)
}

/// Consistency loss node, or `None` when no entity is shared.
fn consistency_on_tape(
    tape: &mut Tape,
    cells_i: &[Var],
    example_i: &ProcessExample,
    cells_primary: &[Var],
    example_primary: &ProcessExample,
) -> Result<Option<Var>, ModelError> {
    let pairs = shared_entities(example_i, example_primary);
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut terms = Vec::with_capacity(pairs.len());
    for (i, p) in pairs {
        let si = summary_on_tape(tape, cells_i, example_i, i)?;
        let sp = summary_on_tape(tape, cells_primary, example_primary, p)?;
        terms.push(tape.mse(si, sp)?);
    }
    let stacked = tape.concat_cols(&terms)?;
    Ok(Some(tape.mean(stacked)?))
}

/// Records the adaptive batch objective on `tape`.
///
/// The primary member is run first; the other members are only recorded when
/// the consistency term is used, since otherwise they do not affect the loss.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    batch: &LaceBatch<'_>,
    cfg: &TrainingConfig,
) -> Result<(Var, LossBreakdown), ModelError> {
    let primary = batch.primary();
    let gold = primary
        .gold
        .as_ref()
        .ok_or_else(|| ModelError::Config(format!("primary example {} has no gold", primary.id)))?;
    let primary_cells = grid_on_tape(tape, params, bound, primary)?;
    let sup = supervised_on_tape(tape, &primary_cells, gold)?;
    let sup_value = tape.scalar_value(sup);
    let above_threshold = sup_value > cfg.sup_threshold;

    if !consistency_active(sup_value, cfg) {
        return Ok((
            sup,
            LossBreakdown {
                total: sup_value,
                supervised: sup_value,
                consistency: None,
                above_threshold,
            },
        ));
    }

    let mut con_terms = Vec::new();
    for other in batch.others() {
        let cells = grid_on_tape(tape, params, bound, other)?;
        if let Some(term) = consistency_on_tape(tape, &cells, other, &primary_cells, primary)? {
            con_terms.push(term);
        }
    }
    let weighted_sup = tape.scale(sup, cfg.lambda);
    let (total, con_value) = if con_terms.is_empty() {
        let zero = tape.scalar(0.0);
        let weighted_con = tape.scale(zero, 1.0 - cfg.lambda);
        (tape.add(weighted_sup, weighted_con)?, 0.0)
    } else {
        let stacked = tape.concat_cols(&con_terms)?;
        let con = tape.sum(stacked);
        let con_value = tape.scalar_value(con);
        let weighted_con = tape.scale(con, 1.0 - cfg.lambda);
        (tape.add(weighted_sup, weighted_con)?, con_value)
    };
    Ok((
        total,
        LossBreakdown {
            total: tape.scalar_value(total),
            supervised: sup_value,
            consistency: Some(con_value),
            above_threshold,
        },
    ))
}

/// Value of the batch objective without touching gradients.
pub fn batch_loss(
    batch: &LaceBatch<'_>,
    params: &ModelParams,
    cfg: &TrainingConfig,
) -> Result<LossBreakdown, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    Ok(batch_loss_on_tape(&mut tape, params, &bound, batch, cfg)?.1)
}

/// Adds ∂(batch objective)/∂θ into the gradient slots of `params`.
pub fn accumulate_batch_gradient(
    batch: &LaceBatch<'_>,
    params: &mut ModelParams,
    cfg: &TrainingConfig,
) -> Result<LossBreakdown, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let (total, breakdown) = batch_loss_on_tape(&mut tape, params, &bound, batch, cfg)?;
    if breakdown.total.is_finite() {
        tape.backward(total)?;
        params.accumulate_grads(&tape, &bound);
    }
    Ok(breakdown)
}
