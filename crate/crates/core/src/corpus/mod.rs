//! Paragraph data model, topic grouping and corpus ingestion.

mod embedding;
mod io;
mod synthetic;

pub use embedding::{EmbeddingTable, Vocabulary};
pub use io::{group_by_topic, load_corpus, read_examples, write_examples, ExampleRecord};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("example {id}: {message}")]
    Validation { id: String, message: String },
}

/// The four state changes, in canonical order. Every 4-vector in the crate
/// is indexed by [`StateChange::index`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StateChange {
    Move,
    Create,
    Destroy,
    None,
}

impl StateChange {
    pub const ALL: [StateChange; 4] = [
        StateChange::Move,
        StateChange::Create,
        StateChange::Destroy,
        StateChange::None,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StateChange::Move => "MOVE",
            StateChange::Create => "CREATE",
            StateChange::Destroy => "DESTROY",
            StateChange::None => "NONE",
        }
    }

    pub fn is_change(self) -> bool {
        self != StateChange::None
    }
}

impl fmt::Display for StateChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateChange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MOVE" => Ok(StateChange::Move),
            "CREATE" => Ok(StateChange::Create),
            "DESTROY" => Ok(StateChange::Destroy),
            "NONE" => Ok(StateChange::None),
            other => Err(format!("unknown state change {other:?}")),
        }
    }
}

/// A 4-way distribution over [`StateChange::ALL`].
pub type Distribution = [f64; 4];

/// Steps × entities matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeGrid<C> {
    rows: usize,
    cols: usize,
    cells: Vec<C>,
}

pub type LabelGrid = ChangeGrid<StateChange>;
pub type DistributionGrid = ChangeGrid<Distribution>;

impl<C: Clone> ChangeGrid<C> {
    pub fn filled(rows: usize, cols: usize, value: C) -> Self {
        ChangeGrid {
            rows,
            cols,
            cells: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<C>>) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(ChangeGrid {
            rows: rows.len(),
            cols,
            cells: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, step: usize, entity: usize) -> &C {
        assert!(step < self.rows && entity < self.cols, "cell out of range");
        &self.cells[step * self.cols + entity]
    }

    pub fn set(&mut self, step: usize, entity: usize, value: C) {
        assert!(step < self.rows && entity < self.cols, "cell out of range");
        self.cells[step * self.cols + entity] = value;
    }

    /// The cells of one entity, top to bottom.
    pub fn column(&self, entity: usize) -> impl Iterator<Item = &C> + '_ {
        assert!(entity < self.cols, "column out of range");
        (0..self.rows).map(move |t| &self.cells[t * self.cols + entity])
    }

    pub fn row_vecs(&self) -> Vec<Vec<C>> {
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        self.cells.chunks(self.cols).map(<[C]>::to_vec).collect()
    }

    pub fn cells(&self) -> &[C] {
        &self.cells
    }

    /// Keeps only the listed columns, in the listed order.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(self.rows * columns.len());
        for t in 0..self.rows {
            for &j in columns {
                cells.push(self.get(t, j).clone());
            }
        }
        ChangeGrid {
            rows: self.rows,
            cols: columns.len(),
            cells,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mention {
    pub step: usize,
    /// First token of the span.
    pub start: usize,
    /// One past the last token of the span.
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub name: String,
    pub mentions: Vec<Mention>,
}

impl Entity {
    /// Lowercased, trimmed name used for cross-paragraph matching.
    pub fn key(&self) -> String {
        normalize_entity(&self.name)
    }
}

pub fn normalize_entity(name: &str) -> String {
    name.trim().to_lowercase()
}

/// One paragraph describing a process.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessExample {
    pub id: String,
    pub topic: String,
    pub steps: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    /// `(step, token)` positions of verbs.
    pub verbs: Vec<(usize, usize)>,
    pub gold: Option<LabelGrid>,
}

impl ProcessExample {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn is_labeled(&self) -> bool {
        self.gold.is_some()
    }

    /// Token positions in `step` that mention `entity`, sorted and deduplicated.
    pub fn entity_tokens(&self, step: usize, entity: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.entities[entity]
            .mentions
            .iter()
            .filter(|m| m.step == step)
            .flat_map(|m| m.start..m.end)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn verb_tokens(&self, step: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .verbs
            .iter()
            .filter(|(s, _)| *s == step)
            .map(|(_, i)| *i)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks the structural invariants of a paragraph.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |message: String| {
            Err(CorpusError::Validation {
                id: self.id.clone(),
                message,
            })
        };
        if self.steps.is_empty() {
            return fail("paragraph has no steps".into());
        }
        if let Some(t) = self.steps.iter().position(Vec::is_empty) {
            return fail(format!("step {t} has no tokens"));
        }
        if self.entities.is_empty() {
            return fail("paragraph has no entities".into());
        }
        for entity in &self.entities {
            for m in &entity.mentions {
                let Some(sentence) = self.steps.get(m.step) else {
                    return fail(format!(
                        "mention of {:?} refers to step {} of {}",
                        entity.name,
                        m.step,
                        self.steps.len()
                    ));
                };
                if m.start >= m.end || m.end > sentence.len() {
                    return fail(format!(
                        "mention of {:?} spans [{}, {}) outside step {} of length {}",
                        entity.name,
                        m.start,
                        m.end,
                        m.step,
                        sentence.len()
                    ));
                }
            }
        }
        for &(step, token) in &self.verbs {
            if self.steps.get(step).is_none_or(|s| token >= s.len()) {
                return fail(format!(
                    "verb position ({step}, {token}) is outside the text"
                ));
            }
        }
        if let Some(gold) = &self.gold {
            if gold.rows() != self.num_steps() || gold.cols() != self.num_entities() {
                return fail(format!(
                    "gold grid is {}x{} but paragraph has {} steps and {} entities",
                    gold.rows(),
                    gold.cols(),
                    self.num_steps(),
                    self.num_entities()
                ));
            }
        }
        Ok(())
    }
}

/// All paragraphs that describe the same process.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicGroup {
    pub topic: String,
    pub labeled: Vec<ProcessExample>,
    pub unlabeled: Vec<ProcessExample>,
}

impl TopicGroup {
    pub fn new(topic: impl Into<String>) -> Self {
        TopicGroup {
            topic: topic.into(),
            labeled: Vec::new(),
            unlabeled: Vec::new(),
        }
    }

    pub fn push(&mut self, example: ProcessExample) {
        if example.is_labeled() {
            self.labeled.push(example);
        } else {
            self.unlabeled.push(example);
        }
    }

    /// Labeled members first, then unlabeled, each in file order.
    pub fn members(&self) -> impl Iterator<Item = &ProcessExample> + '_ {
        self.labeled.iter().chain(&self.unlabeled)
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Index pairs `(i, j)` with `a.entities[i]` and `b.entities[j]` naming the
/// same entity after lowercasing and trimming. Ordered by `i`; each entity
/// of `b` is used at most once.
pub fn shared_entities(a: &ProcessExample, b: &ProcessExample) -> Vec<(usize, usize)> {
    let keys_b: Vec<String> = b.entities.iter().map(Entity::key).collect();
    let mut used = vec![false; keys_b.len()];
    let mut pairs = Vec::new();
    for (i, entity) in a.entities.iter().enumerate() {
        let key = entity.key();
        if let Some(j) = (0..keys_b.len()).find(|&j| !used[j] && keys_b[j] == key) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// A paragraph with one single-token sentence per step, each mentioning
    /// every entity at token 0 and with a verb at token 1.
    pub fn example(id: &str, topic: &str, entities: &[&str], steps: usize) -> ProcessExample {
        let steps_tokens: Vec<Vec<String>> = (0..steps)
            .map(|t| vec![entities[t % entities.len()].to_string(), "moves".into()])
            .collect();
        ProcessExample {
            id: id.into(),
            topic: topic.into(),
            steps: steps_tokens,
            entities: entities
                .iter()
                .enumerate()
                .map(|(j, name)| Entity {
                    name: name.to_string(),
                    mentions: (0..steps)
                        .filter(|t| t % entities.len() == j)
                        .map(|t| Mention {
                            step: t,
                            start: 0,
                            end: 1,
                        })
                        .collect(),
                })
                .collect(),
            verbs: (0..steps).map(|t| (t, 1)).collect(),
            gold: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::example;
    use super::*;

    #[test]
    fn shared_entities_intersection() {
        let a = example("a", "t", &["water", "oxygen"], 2);
        let b = example("b", "t", &["oxygen", "sugar"], 2);
        assert_eq!(shared_entities(&a, &b), vec![(1, 0)]);
    }

    #[test]
    fn shared_entities_no_synonyms() {
        let a = example("a", "t", &["CO2"], 1);
        let b = example("b", "t", &["carbon dioxide"], 1);
        assert!(shared_entities(&a, &b).is_empty());
    }

    #[test]
    fn shared_entities_identity_and_normalization() {
        let a = example("a", "t", &["water", "Light ", "sugar"], 3);
        let b = example("b", "t", &["water", "light", "SUGAR"], 3);
        assert_eq!(shared_entities(&a, &b), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn validation_catches_gold_shape() {
        let mut ex = example("bad", "t", &["water", "oxygen", "sugar"], 4);
        ex.gold = Some(LabelGrid::filled(3, 3, StateChange::None));
        let err = ex.validate().unwrap_err();
        assert!(matches!(&err, CorpusError::Validation { id, .. } if id == "bad"));
    }

    #[test]
    fn validation_catches_spans() {
        let mut ex = example("x", "t", &["water"], 1);
        ex.entities[0].mentions[0].end = 5;
        assert!(ex.validate().is_err());
        let mut ex = example("y", "t", &["water"], 1);
        ex.verbs.push((3, 0));
        assert!(ex.validate().is_err());
    }

    #[test]
    fn state_change_order_and_names() {
        let idx: Vec<usize> = StateChange::ALL.iter().map(|s| s.index()).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        for s in StateChange::ALL {
            assert_eq!(s.as_str().parse::<StateChange>().unwrap(), s);
        }
        assert!("move".parse::<StateChange>().is_err());
    }

    #[test]
    fn grid_columns() {
        let g = LabelGrid::from_rows(vec![
            vec![StateChange::Move, StateChange::None],
            vec![StateChange::Destroy, StateChange::Create],
        ])
        .unwrap();
        let col: Vec<_> = g.column(1).copied().collect();
        assert_eq!(col, vec![StateChange::None, StateChange::Create]);
        assert_eq!(
            g.select_columns(&[1, 0]).row_vecs()[1],
            vec![StateChange::Create, StateChange::Destroy]
        );
    }
}
