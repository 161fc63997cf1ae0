use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;

use super::{LstmParams, ModelDims, ModelError, ModelParams};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// JSON container for a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: ModelDims,
    pub embedding_trainable: bool,
    pub vocab: Vec<String>,
    tensors: Vec<NamedTensor>,
}

impl From<&ModelParams> for Checkpoint {
    fn from(params: &ModelParams) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: params.dims,
            embedding_trainable: params.embedding_trainable,
            vocab: params.vocab.tokens().to_vec(),
            tensors: params
                .tensors()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.values().to_vec(),
                })
                .collect(),
        }
    }
}

impl Checkpoint {
    /// Rebuilds the parameters, rejecting any tensor whose name or shape does
    /// not match what `dims` and the vocabulary imply.
    pub fn into_params(self) -> Result<ModelParams, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let dims = ModelDims::new(self.dims.embedding_dim, self.dims.hidden_size)?;
        let vocab = Vocabulary::new(self.vocab.iter().cloned());
        if vocab.len() != self.vocab.len() {
            return Err(ModelError::Checkpoint(
                "vocabulary has duplicate tokens".into(),
            ));
        }
        let expected = ModelParams::expected_shapes(dims, vocab.len());
        if expected.len() != self.tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        for ((name, shape), stored) in expected.into_iter().zip(self.tensors) {
            if stored.name != name || stored.shape != shape {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {:?} with shape {:?} where {:?} with shape {:?} was expected",
                    stored.name, stored.shape, name, shape
                )));
            }
            let t = Tensor::new(stored.shape, stored.values)
                .map_err(|e| ModelError::Checkpoint(format!("tensor {name}: {e}")))?;
            if !t.all_finite() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name} is not finite"
                )));
            }
            tensors.push(t);
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked above");
        Ok(ModelParams {
            dims,
            vocab,
            embedding: next(),
            embedding_trainable: self.embedding_trainable,
            lstm_forward: LstmParams {
                w_input: next(),
                w_hidden: next(),
                bias: next(),
            },
            lstm_backward: LstmParams {
                w_input: next(),
                w_hidden: next(),
                bias: next(),
            },
            attention: next(),
            attention_bias: next(),
            decoder: next(),
            decoder_bias: next(),
        })
    }
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let json = serde_json::to_string(&Checkpoint::from(params))
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    ckpt.into_params()
}
