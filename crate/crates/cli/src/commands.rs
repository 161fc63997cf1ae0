use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lace_core::corpus::{
    load_corpus, read_examples, write_examples, CorpusError, EmbeddingTable, ExampleRecord,
    StateChange, Vocabulary,
};
use lace_core::evaluation::{discretize, evaluate, summary_set};
use lace_core::model::{load_checkpoint, save_checkpoint};
use lace_core::{
    generate_synthetic, predict_grid, train_from, EvaluationReport, ModelParams, TopicGroup,
    TrainReport,
};

use crate::config::{apply_label_fraction, require_file, require_writable, LabelSplit, RunConfig};
use crate::error::CliError;

/// Everything `train` writes to its report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: RunConfig,
    pub labels: LabelSplit,
    pub training: TrainReport,
    /// Best model scored on the full training corpus, before any demotion.
    pub train_eval: EvaluationReport,
    pub dev_eval: Option<EvaluationReport>,
    pub test_eval: Option<EvaluationReport>,
}

fn in_file(path: &Path, e: CorpusError) -> CliError {
    match CliError::from(e) {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn load_nonempty(path: &Path) -> Result<Vec<TopicGroup>, CliError> {
    let groups = load_corpus(path).map_err(|e| in_file(path, e))?;
    if groups.is_empty() {
        return Err(CliError::Data(format!(
            "corpus {} has no paragraphs",
            path.display()
        )));
    }
    Ok(groups)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Trains, keeps the best-dev model, writes checkpoint and report.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    cfg.validate_for_training()?;
    let training_cfg = cfg.training();
    let train_path = cfg.train.as_deref().expect("validated");
    let full = load_nonempty(train_path)?;
    let dev = match &cfg.dev {
        Some(p) => load_nonempty(p)?,
        None => Vec::new(),
    };
    let test = match &cfg.test {
        Some(p) => Some(load_nonempty(p)?),
        None => None,
    };

    let (groups, labels) =
        apply_label_fraction(&full, cfg.label_fraction, cfg.use_unlabeled, cfg.seed);
    log::info!(
        "{} labeled, {} unlabeled, {} dropped paragraphs",
        labels.labeled,
        labels.unlabeled,
        labels.dropped
    );

    let mut effective = cfg.clone();
    let params = match &cfg.embeddings {
        Some(path) => {
            let table = EmbeddingTable::load(path)?;
            if table.dimension() != cfg.embedding_dim {
                log::warn!(
                    "embedding_dim {} replaced by the loaded dimension {}",
                    cfg.embedding_dim,
                    table.dimension()
                );
                effective.embedding_dim = table.dimension();
            }
            ModelParams::with_embeddings(table, cfg.hidden_size, cfg.train_embeddings, cfg.seed)?
        }
        None => {
            let vocab = Vocabulary::from_examples(groups.iter().flat_map(TopicGroup::members));
            ModelParams::init(training_cfg.dims()?, vocab, cfg.seed)
        }
    };

    let outcome = train_from(params, &groups, &effective.training(), &dev)?;
    save_checkpoint(
        &outcome.params,
        cfg.checkpoint.as_deref().expect("validated"),
    )?;

    let summary = TrainSummary {
        config: effective,
        labels,
        training: outcome.report,
        train_eval: evaluate(&outcome.params, &full)?,
        dev_eval: if dev.is_empty() {
            None
        } else {
            Some(evaluate(&outcome.params, &dev)?)
        },
        test_eval: match &test {
            Some(t) => Some(evaluate(&outcome.params, t)?),
            None => None,
        },
    };
    if let Some(path) = &cfg.report {
        write_json(path, &summary)?;
    }
    Ok(summary)
}

/// Scores a checkpoint on a labeled corpus.
pub fn cmd_eval(
    checkpoint: &Path,
    corpus: &Path,
    report: Option<&Path>,
) -> Result<EvaluationReport, CliError> {
    require_file(checkpoint)?;
    require_file(corpus)?;
    if let Some(r) = report {
        require_writable(r)?;
    }
    let params = load_checkpoint(checkpoint)?;
    let groups = load_nonempty(corpus)?;
    if groups.iter().all(|g| g.labeled.is_empty()) {
        log::warn!(
            "{} has no gold labels; F1 is reported as 0",
            corpus.display()
        );
    }
    let result = evaluate(&params, &groups)?;
    if let Some(path) = report {
        write_json(path, &result)?;
    }
    Ok(result)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntitySummary {
    pub entity: String,
    pub changes: Vec<StateChange>,
}

/// One line of `predict` output: the input paragraph with its predicted grid
/// in the `gold` slot, so the file loads back as a labeled corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(flatten)]
    pub paragraph: ExampleRecord,
    pub summary_sets: Vec<EntitySummary>,
}

/// Predicts every paragraph on its own; topics are never consulted.
pub fn cmd_predict(checkpoint: &Path, corpus: &Path, out: &Path) -> Result<usize, CliError> {
    require_file(checkpoint)?;
    require_file(corpus)?;
    require_writable(out)?;
    let params = load_checkpoint(checkpoint)?;
    let examples = read_examples(corpus).map_err(|e| in_file(corpus, e))?;
    if examples.is_empty() {
        return Err(CliError::Data(format!(
            "corpus {} has no paragraphs",
            corpus.display()
        )));
    }
    let mut lines = String::new();
    for ex in &examples {
        let hard = discretize(&predict_grid(&params, ex)?);
        let summary_sets = ex
            .entities
            .iter()
            .enumerate()
            .map(|(j, e)| EntitySummary {
                entity: e.name.clone(),
                changes: summary_set(&hard, j).iter().collect(),
            })
            .collect();
        let mut paragraph = ExampleRecord::from(ex);
        paragraph.gold = Some(hard.row_vecs());
        let record = PredictionRecord {
            paragraph,
            summary_sets,
        };
        lines.push_str(&serde_json::to_string(&record).expect("records serialize"));
        lines.push('\n');
    }
    fs::write(out, lines)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", out.display())))?;
    Ok(examples.len())
}

/// Sizes for `gen`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenSpec {
    pub seed: u64,
    pub train_topics: usize,
    pub dev_topics: usize,
    pub test_topics: usize,
    pub paragraphs: usize,
    pub noise: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            seed: 0,
            train_topics: 18,
            dev_topics: 6,
            test_topics: 6,
            paragraphs: 3,
            noise: 0.0,
        }
    }
}

/// Writes `train.jsonl`, `dev.jsonl` and `test.jsonl` into `dir`. The three
/// splits cover disjoint topics.
pub fn cmd_gen(spec: &GenSpec, dir: &Path) -> Result<[PathBuf; 3], CliError> {
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(CliError::Config(format!(
            "noise must lie in [0, 1], got {}",
            spec.noise
        )));
    }
    if spec.paragraphs == 0 {
        return Err(CliError::Config("paragraphs must be >= 1".into()));
    }
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let total = spec.train_topics + spec.dev_topics + spec.test_topics;
    let groups = generate_synthetic(spec.seed, total, spec.paragraphs, spec.noise);
    let (train, rest) = groups.split_at(spec.train_topics);
    let (dev, test) = rest.split_at(spec.dev_topics);
    let paths = [
        dir.join("train.jsonl"),
        dir.join("dev.jsonl"),
        dir.join("test.jsonl"),
    ];
    for (path, split) in paths.iter().zip([train, dev, test]) {
        write_examples(path, split.iter().flat_map(TopicGroup::members))?;
    }
    Ok(paths)
}
