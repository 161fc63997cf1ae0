use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::{EmbeddingTable, Vocabulary};

use super::ModelError;

/// Sizes that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub embedding_dim: usize,
    /// Width of the concatenated forward and backward states; must be even.
    pub hidden_size: usize,
}

impl ModelDims {
    pub fn new(embedding_dim: usize, hidden_size: usize) -> Result<Self, ModelError> {
        if embedding_dim == 0 {
            return Err(ModelError::Config("embedding_dim must be positive".into()));
        }
        if hidden_size == 0 || !hidden_size.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "hidden_size must be a positive even number, got {hidden_size}"
            )));
        }
        Ok(ModelDims {
            embedding_dim,
            hidden_size,
        })
    }

    pub fn direction_size(&self) -> usize {
        self.hidden_size / 2
    }

    /// Word vector plus the entity and verb indicators.
    pub fn input_size(&self) -> usize {
        self.embedding_dim + 2
    }
}

/// One direction of the LSTM. Gate blocks are laid out as
/// `[input, forget, cell, output]` along the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `input_size × 4h`
    pub w_input: Tensor,
    /// `h × 4h`
    pub w_hidden: Tensor,
    /// `1 × 4h`
    pub bias: Tensor,
}

/// Every trainable tensor of the step/entity state-change classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub vocab: Vocabulary,
    /// `(|vocab| + 1) × embedding_dim`, last row for unknown tokens.
    pub embedding: Tensor,
    pub embedding_trainable: bool,
    pub lstm_forward: LstmParams,
    pub lstm_backward: LstmParams,
    /// `hidden × 2·hidden` bilinear attention matrix.
    pub attention: Tensor,
    /// Scalar attention bias.
    pub attention_bias: Tensor,
    /// `hidden × 4`
    pub decoder: Tensor,
    /// `1 × 4`
    pub decoder_bias: Tensor,
}

/// Parameters registered on a tape for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub embedding: Var,
    pub lstm_forward: BoundLstm,
    pub lstm_backward: BoundLstm,
    pub attention: Var,
    pub attention_bias: Var,
    pub decoder: Var,
    pub decoder_bias: Var,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let r = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-r..=r)).collect();
    Tensor::new(shape, values).expect("shape and length agree")
}

impl LstmParams {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        LstmParams {
            w_input: uniform(rng, vec![input, 4 * hidden], input),
            w_hidden: uniform(rng, vec![hidden, 4 * hidden], hidden),
            bias: uniform(rng, vec![1, 4 * hidden], hidden),
        }
    }

    fn bind(&self, tape: &mut Tape) -> BoundLstm {
        BoundLstm {
            w_input: tape.param(&self.w_input),
            w_hidden: tape.param(&self.w_hidden),
            bias: tape.param(&self.bias),
        }
    }
}

impl ModelParams {
    /// Randomly initialized model with a trainable embedding over `vocab`.
    pub fn init(dims: ModelDims, vocab: Vocabulary, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::random(vocab, dims.embedding_dim, &mut rng);
        Self::init_rest(dims, table, true, &mut rng)
    }

    /// Model over pretrained vectors; the embedding dimension comes from the
    /// table. Loaded vectors default to frozen.
    pub fn with_embeddings(
        table: EmbeddingTable,
        hidden_size: usize,
        trainable: bool,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let dims = ModelDims::new(table.dimension(), hidden_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::init_rest(dims, table, trainable, &mut rng))
    }

    fn init_rest(
        dims: ModelDims,
        table: EmbeddingTable,
        trainable: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (vocab, d, vectors) = table.into_parts();
        let embedding = Tensor::matrix(vocab.len() + 1, d, vectors).expect("table is rectangular");
        let h = dims.direction_size();
        let hidden = dims.hidden_size;
        ModelParams {
            dims,
            vocab,
            embedding,
            embedding_trainable: trainable,
            lstm_forward: LstmParams::init(rng, dims.input_size(), h),
            lstm_backward: LstmParams::init(rng, dims.input_size(), h),
            attention: uniform(rng, vec![hidden, 2 * hidden], 2 * hidden),
            attention_bias: uniform(rng, vec![], 2 * hidden),
            decoder: uniform(rng, vec![hidden, 4], hidden),
            decoder_bias: uniform(rng, vec![1, 4], hidden),
        }
    }

    /// Registers every tensor on `tape`. A frozen embedding is a constant.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let embedding = if self.embedding_trainable {
            tape.param(&self.embedding)
        } else {
            tape.constant(&self.embedding)
        };
        BoundParams {
            embedding,
            lstm_forward: self.lstm_forward.bind(tape),
            lstm_backward: self.lstm_backward.bind(tape),
            attention: tape.param(&self.attention),
            attention_bias: tape.param(&self.attention_bias),
            decoder: tape.param(&self.decoder),
            decoder_bias: tape.param(&self.decoder_bias),
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("embedding", &self.embedding),
            ("lstm_forward.w_input", &self.lstm_forward.w_input),
            ("lstm_forward.w_hidden", &self.lstm_forward.w_hidden),
            ("lstm_forward.bias", &self.lstm_forward.bias),
            ("lstm_backward.w_input", &self.lstm_backward.w_input),
            ("lstm_backward.w_hidden", &self.lstm_backward.w_hidden),
            ("lstm_backward.bias", &self.lstm_backward.bias),
            ("attention", &self.attention),
            ("attention_bias", &self.attention_bias),
            ("decoder", &self.decoder),
            ("decoder_bias", &self.decoder_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("embedding", &mut self.embedding),
            ("lstm_forward.w_input", &mut self.lstm_forward.w_input),
            ("lstm_forward.w_hidden", &mut self.lstm_forward.w_hidden),
            ("lstm_forward.bias", &mut self.lstm_forward.bias),
            ("lstm_backward.w_input", &mut self.lstm_backward.w_input),
            ("lstm_backward.w_hidden", &mut self.lstm_backward.w_hidden),
            ("lstm_backward.bias", &mut self.lstm_backward.bias),
            ("attention", &mut self.attention),
            ("attention_bias", &mut self.attention_bias),
            ("decoder", &mut self.decoder),
            ("decoder_bias", &mut self.decoder_bias),
        ]
    }

    /// Expected shape of each named tensor for these dims and vocabulary.
    pub fn expected_shapes(dims: ModelDims, vocab_len: usize) -> Vec<(&'static str, Vec<usize>)> {
        let h = dims.direction_size();
        let hidden = dims.hidden_size;
        let input = dims.input_size();
        let lstm = |prefix: &'static [&'static str; 3]| {
            vec![
                (prefix[0], vec![input, 4 * h]),
                (prefix[1], vec![h, 4 * h]),
                (prefix[2], vec![1, 4 * h]),
            ]
        };
        let mut out = vec![("embedding", vec![vocab_len + 1, dims.embedding_dim])];
        out.extend(lstm(&[
            "lstm_forward.w_input",
            "lstm_forward.w_hidden",
            "lstm_forward.bias",
        ]));
        out.extend(lstm(&[
            "lstm_backward.w_input",
            "lstm_backward.w_hidden",
            "lstm_backward.bias",
        ]));
        out.extend([
            ("attention", vec![hidden, 2 * hidden]),
            ("attention_bias", vec![]),
            ("decoder", vec![hidden, 4]),
            ("decoder_bias", vec![1, 4]),
        ]);
        out
    }

    /// Copies accumulated tape gradients into the tensors' gradient slots.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundParams) {
        let vars = [
            bound.embedding,
            bound.lstm_forward.w_input,
            bound.lstm_forward.w_hidden,
            bound.lstm_forward.bias,
            bound.lstm_backward.w_input,
            bound.lstm_backward.w_hidden,
            bound.lstm_backward.bias,
            bound.attention,
            bound.attention_bias,
            bound.decoder,
            bound.decoder_bias,
        ];
        for ((_, tensor), var) in self.tensors_mut().into_iter().zip(vars) {
            if let Some(g) = tape.grad(var) {
                tensor.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.zero_grad();
        }
    }

    /// Euclidean norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .filter_map(|(_, t)| t.grad())
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            if let Some(g) = t.grad() {
                let scaled: Vec<f64> = g.iter().map(|x| x * factor).collect();
                t.zero_grad();
                t.accumulate_grad(&scaled);
            }
        }
    }

    /// Plain gradient descent: `θ ← θ − lr·∇θ`, then clears gradients.
    pub fn sgd_step(&mut self, learning_rate: f64) {
        let trainable_embedding = self.embedding_trainable;
        for (name, tensor) in self.tensors_mut() {
            if name == "embedding" && !trainable_embedding {
                tensor.zero_grad();
                continue;
            }
            if let Some(g) = tensor.grad().map(<[f64]>::to_vec) {
                for (v, d) in tensor.values_mut().iter_mut().zip(g) {
                    *v -= learning_rate * d;
                }
            }
            tensor.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
