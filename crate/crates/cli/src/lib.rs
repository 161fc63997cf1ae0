//! The `lace` command line: synthetic data generation, training, evaluation
//! and prediction.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_gen, cmd_predict, cmd_train, GenSpec, PredictionRecord, TrainSummary,
};
pub use config::{apply_label_fraction, LabelSplit, RunConfig, TrainingFlags};
pub use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "lace",
    version,
    about = "Label-consistent state-change tracking for procedural text"
)]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Train a model and write its best-dev checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled corpus.
    Eval(EvalArgs),
    /// Write per-paragraph predictions as JSON Lines.
    Predict(PredictArgs),
    /// Generate synthetic train/dev/test corpora.
    Gen(GenArgs),
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Where to write the JSON training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainingFlags,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// TOML run configuration supplying `checkpoint` and `test`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus to score; defaults to the configured test corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 18)]
    pub train_topics: usize,
    #[arg(long, default_value_t = 6)]
    pub dev_topics: usize,
    #[arg(long, default_value_t = 6)]
    pub test_topics: usize,
    /// Paragraphs per topic.
    #[arg(long, default_value_t = 3)]
    pub paragraphs: usize,
    /// Probability that a paragraph perturbs one entity's summary.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::from_toml_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing {what}")))
}

/// Builds the effective run configuration of a `train` invocation.
pub fn train_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = load_config(args.config.as_ref())?;
    for (slot, flag) in [
        (&mut cfg.train, &args.train),
        (&mut cfg.dev, &args.dev),
        (&mut cfg.test, &args.test),
        (&mut cfg.checkpoint, &args.checkpoint),
        (&mut cfg.report, &args.report),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    args.flags.apply(&mut cfg);
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let cfg = train_config(&args)?;
            let summary = cmd_train(&cfg)?;
            let t = &summary.training;
            eprintln!(
                "best epoch {} of {}; train F1 {:.4}; dev F1 {}",
                t.best_epoch,
                t.epochs.len(),
                summary.train_eval.metrics.f1,
                t.best_dev_f1.map_or("n/a".into(), |f| format!("{f:.4}"))
            );
        }
        Command::Eval(args) => {
            let cfg = load_config(args.config.as_ref())?;
            let checkpoint = required(args.checkpoint.or(cfg.checkpoint), "--checkpoint")?;
            let corpus = required(args.corpus.or(cfg.test), "--corpus")?;
            let report = cmd_eval(&checkpoint, &corpus, args.report.as_deref())?;
            print_json(&report);
        }
        Command::Predict(args) => {
            let cfg = load_config(args.config.as_ref())?;
            let checkpoint = required(args.checkpoint.or(cfg.checkpoint), "--checkpoint")?;
            let corpus = required(args.corpus.or(cfg.test), "--corpus")?;
            let n = cmd_predict(&checkpoint, &corpus, &args.out)?;
            eprintln!("wrote {n} predictions to {}", args.out.display());
        }
        Command::Gen(args) => {
            let spec = GenSpec {
                seed: args.seed,
                train_topics: args.train_topics,
                dev_topics: args.dev_topics,
                test_topics: args.test_topics,
                paragraphs: args.paragraphs,
                noise: args.noise,
            };
            for path in cmd_gen(&spec, &args.out_dir)? {
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
