//! Procedural-text entity state tracking trained with a cross-paragraph
//! label-consistency objective.
//!
//! Paragraphs about the same process are grouped by topic. Training forms
//! one batch per labeled paragraph of a group: that paragraph contributes a
//! supervised loss, and every other paragraph of the group is pulled towards
//! its per-entity summary of predicted state changes. The consistency term
//! is switched off for any batch whose supervised loss is still above a
//! threshold.
//!
//! Modules, bottom-up:
//! - [`autodiff`]: reverse-mode tape over small `f64` tensors
//! - [`corpus`]: paragraphs, topic groups, file formats, synthetic data
//! - [`model`]: BiLSTM + bilinear attention state-change classifier
//! - [`training`]: batching, losses, SGD loop
//! - [`evaluation`]: P/R/F1 and the consistency score

pub mod autodiff;
pub mod corpus;
pub mod evaluation;
pub mod model;
pub mod training;

pub use corpus::{
    generate_synthetic, load_corpus, ChangeGrid, DistributionGrid, LabelGrid, ProcessExample,
    StateChange, TopicGroup,
};
pub use evaluation::{evaluate, EvaluationReport, MetricsReport};
pub use model::{predict_grid, ModelDims, ModelParams};
pub use training::{train, train_from, TrainOutcome, TrainReport, TrainingConfig};
