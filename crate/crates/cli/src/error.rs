use lace_core::corpus::CorpusError;
use lace_core::evaluation::EvalError;
use lace_core::model::ModelError;
use lace_core::training::TrainError;

/// Failure of a command, classified by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, configuration or paths (exit code 1).
    #[error("{0}")]
    Config(String),
    /// Input data failed to parse or validate (exit code 2).
    #[error("{0}")]
    Data(String),
    /// Training produced a non-finite loss (exit code 3).
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::NoLabeledData => CliError::Data(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Eval(ev) => ev.into(),
        }
    }
}
