//! Grid-level precision/recall/F1 and the cross-paragraph consistency score.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    shared_entities, DistributionGrid, LabelGrid, ProcessExample, StateChange, TopicGroup,
};
use crate::model::{predict_grid, ModelError, ModelParams};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("grid shape mismatch: predicted {pred:?}, gold {gold:?}")]
    Shape {
        pred: (usize, usize),
        gold: (usize, usize),
    },
    #[error("no prediction for example {0}")]
    MissingPrediction(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Argmax per cell; ties go to the earliest state in canonical order.
pub fn discretize(grid: &DistributionGrid) -> LabelGrid {
    let mut out = LabelGrid::filled(grid.rows(), grid.cols(), StateChange::None);
    for t in 0..grid.rows() {
        for j in 0..grid.cols() {
            out.set(t, j, argmax(grid.get(t, j)));
        }
    }
    out
}

fn argmax(dist: &[f64; 4]) -> StateChange {
    let mut best = 0;
    for k in 1..4 {
        if dist[k] > dist[best] {
            best = k;
        }
    }
    StateChange::ALL[best]
}

/// Positive-cell counts; additive across grids.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold_positives: usize,
    pub predicted_positives: usize,
    pub matched: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        self.gold_positives += rhs.gold_positives;
        self.predicted_positives += rhs.predicted_positives;
        self.matched += rhs.matched;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

impl From<Counts> for MetricsReport {
    fn from(counts: Counts) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(counts.matched, counts.predicted_positives);
        let recall = ratio(counts.matched, counts.gold_positives);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricsReport {
            precision,
            recall,
            f1,
            counts,
        }
    }
}

/// Counts for one grid. A positive is any cell whose label is not `None`;
/// a match needs the same cell and the same label.
pub fn count_grid(pred: &LabelGrid, gold: &LabelGrid) -> Result<Counts, EvalError> {
    if (pred.rows(), pred.cols()) != (gold.rows(), gold.cols()) {
        return Err(EvalError::Shape {
            pred: (pred.rows(), pred.cols()),
            gold: (gold.rows(), gold.cols()),
        });
    }
    let mut counts = Counts::default();
    for (p, g) in pred.cells().iter().zip(gold.cells()) {
        counts.predicted_positives += p.is_change() as usize;
        counts.gold_positives += g.is_change() as usize;
        counts.matched += (p.is_change() && p == g) as usize;
    }
    Ok(counts)
}

pub fn score_grids(pred: &LabelGrid, gold: &LabelGrid) -> Result<MetricsReport, EvalError> {
    count_grid(pred, gold).map(MetricsReport::from)
}

/// The distinct state changes an entity undergoes in a paragraph. Never
/// contains `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SummarySet(BTreeSet<StateChange>);

impl SummarySet {
    pub fn insert(&mut self, change: StateChange) {
        if change.is_change() {
            self.0.insert(change);
        }
    }

    pub fn contains(&self, change: StateChange) -> bool {
        self.0.contains(&change)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = StateChange> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<StateChange> for SummarySet {
    fn from_iter<I: IntoIterator<Item = StateChange>>(iter: I) -> Self {
        let mut set = SummarySet::default();
        for c in iter {
            set.insert(c);
        }
        set
    }
}

pub fn summary_set(grid: &LabelGrid, entity: usize) -> SummarySet {
    grid.column(entity).copied().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicConsistency {
    pub topic: String,
    pub matches: usize,
    pub comparisons: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub matches: usize,
    pub comparisons: usize,
    /// Topics with at least one comparison, in input order.
    pub per_topic: Vec<TopicConsistency>,
}

impl ConsistencyReport {
    /// Percentage of matching comparisons; `None` when nothing was compared.
    pub fn score(&self) -> Option<f64> {
        (self.comparisons > 0).then(|| 100.0 * self.matches as f64 / self.comparisons as f64)
    }
}

/// For every unordered pair of paragraphs in a topic and every entity they
/// share (exact normalized name), counts whether their predicted summary
/// sets are equal.
pub fn consistency_score(
    groups: &[TopicGroup],
    preds: &HashMap<String, LabelGrid>,
) -> Result<ConsistencyReport, EvalError> {
    let mut report = ConsistencyReport::default();
    for group in groups {
        let members: Vec<&ProcessExample> = group.members().collect();
        let grids = members
            .iter()
            .map(|ex| {
                preds
                    .get(&ex.id)
                    .ok_or_else(|| EvalError::MissingPrediction(ex.id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut topic = TopicConsistency {
            topic: group.topic.clone(),
            ..Default::default()
        };
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                for (i, j) in shared_entities(members[a], members[b]) {
                    topic.comparisons += 1;
                    if summary_set(grids[a], i) == summary_set(grids[b], j) {
                        topic.matches += 1;
                    }
                }
            }
        }
        if topic.comparisons > 0 {
            report.matches += topic.matches;
            report.comparisons += topic.comparisons;
            report.per_topic.push(topic);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicEvaluation {
    pub topic: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub consistency_score: Option<f64>,
}

/// Metrics of a model over a corpus, as emitted by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub consistency_score: Option<f64>,
    pub per_topic: Vec<TopicEvaluation>,
}

/// Hard predictions for every paragraph of every group, keyed by id.
pub fn predict_corpus(
    params: &ModelParams,
    groups: &[TopicGroup],
) -> Result<HashMap<String, LabelGrid>, EvalError> {
    let mut preds = HashMap::new();
    for ex in groups.iter().flat_map(TopicGroup::members) {
        preds.insert(ex.id.clone(), discretize(&predict_grid(params, ex)?));
    }
    Ok(preds)
}

/// Micro P/R/F1 over labeled paragraphs and the consistency score over all
/// paragraphs.
pub fn evaluate(
    params: &ModelParams,
    groups: &[TopicGroup],
) -> Result<EvaluationReport, EvalError> {
    let preds = predict_corpus(params, groups)?;
    evaluate_predictions(groups, &preds)
}

pub fn evaluate_predictions(
    groups: &[TopicGroup],
    preds: &HashMap<String, LabelGrid>,
) -> Result<EvaluationReport, EvalError> {
    let consistency = consistency_score(groups, preds)?;
    let mut total = Counts::default();
    let mut per_topic = Vec::with_capacity(groups.len());
    for group in groups {
        let mut counts = Counts::default();
        for ex in &group.labeled {
            let pred = preds
                .get(&ex.id)
                .ok_or_else(|| EvalError::MissingPrediction(ex.id.clone()))?;
            counts += count_grid(pred, ex.gold.as_ref().expect("labeled member has gold"))?;
        }
        total += counts;
        let topic_consistency = consistency
            .per_topic
            .iter()
            .find(|t| t.topic == group.topic)
            .map(|t| 100.0 * t.matches as f64 / t.comparisons as f64);
        per_topic.push(TopicEvaluation {
            topic: group.topic.clone(),
            metrics: counts.into(),
            consistency_score: topic_consistency,
        });
    }
    Ok(EvaluationReport {
        metrics: total.into(),
        consistency_score: consistency.score(),
        per_topic,
    })
}
