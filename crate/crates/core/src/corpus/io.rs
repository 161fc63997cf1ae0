use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ChangeGrid, CorpusError, Entity, LabelGrid, Mention, ProcessExample, StateChange, TopicGroup,
};

/// On-disk shape of one corpus line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    #[serde(default)]
    pub topic: String,
    pub steps: Vec<Vec<String>>,
    pub entities: Vec<EntityRecord>,
    #[serde(default)]
    pub verbs: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<Vec<StateChange>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntityRecord {
    pub name: String,
    #[serde(default)]
    pub mentions: Vec<[usize; 3]>,
}

impl From<&ProcessExample> for ExampleRecord {
    fn from(ex: &ProcessExample) -> Self {
        ExampleRecord {
            id: ex.id.clone(),
            topic: ex.topic.clone(),
            steps: ex.steps.clone(),
            entities: ex
                .entities
                .iter()
                .map(|e| EntityRecord {
                    name: e.name.clone(),
                    mentions: e
                        .mentions
                        .iter()
                        .map(|m| [m.step, m.start, m.end])
                        .collect(),
                })
                .collect(),
            verbs: ex.verbs.iter().map(|&(s, t)| [s, t]).collect(),
            gold: ex.gold.as_ref().map(ChangeGrid::row_vecs),
        }
    }
}

impl TryFrom<ExampleRecord> for ProcessExample {
    type Error = CorpusError;

    fn try_from(rec: ExampleRecord) -> Result<Self, Self::Error> {
        let gold = match rec.gold {
            None => None,
            Some(rows) => {
                let n_rows = rows.len();
                let grid = if rows.is_empty() {
                    Some(LabelGrid::filled(0, rec.entities.len(), StateChange::None))
                } else {
                    ChangeGrid::from_rows(rows)
                };
                Some(grid.ok_or_else(|| CorpusError::Validation {
                    id: rec.id.clone(),
                    message: format!("gold grid rows have unequal lengths ({n_rows} rows)"),
                })?)
            }
        };
        let ex = ProcessExample {
            id: rec.id,
            topic: rec.topic,
            steps: rec.steps,
            entities: rec
                .entities
                .into_iter()
                .map(|e| Entity {
                    name: e.name,
                    mentions: e
                        .mentions
                        .into_iter()
                        .map(|[step, start, end]| Mention { step, start, end })
                        .collect(),
                })
                .collect(),
            verbs: rec.verbs.into_iter().map(|[s, t]| (s, t)).collect(),
            gold,
        };
        ex.validate()?;
        Ok(ex)
    }
}

/// Reads every paragraph of a JSON Lines corpus in file order. Blank lines
/// are skipped; ids must be unique.
pub fn read_examples(path: &Path) -> Result<Vec<ProcessExample>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExampleRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        let example = ProcessExample::try_from(record)?;
        if !seen.insert(example.id.clone()) {
            return Err(CorpusError::Validation {
                id: example.id,
                message: "duplicate id".into(),
            });
        }
        out.push(example);
    }
    Ok(out)
}

/// Groups paragraphs by exact topic string. Groups appear in order of first
/// occurrence; members keep their relative order.
pub fn group_by_topic(examples: impl IntoIterator<Item = ProcessExample>) -> Vec<TopicGroup> {
    let mut groups: Vec<TopicGroup> = Vec::new();
    for ex in examples {
        match groups.iter_mut().find(|g| g.topic == ex.topic) {
            Some(g) => g.push(ex),
            None => {
                let mut g = TopicGroup::new(ex.topic.clone());
                g.push(ex);
                groups.push(g);
            }
        }
    }
    groups
}

pub fn load_corpus(path: &Path) -> Result<Vec<TopicGroup>, CorpusError> {
    Ok(group_by_topic(read_examples(path)?))
}

/// Writes paragraphs as canonical JSON Lines.
pub fn write_examples<'a>(
    path: &Path,
    examples: impl IntoIterator<Item = &'a ProcessExample>,
) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for ex in examples {
        let line = serde_json::to_string(&ExampleRecord::from(ex)).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
