//! Per-(step, entity) state-change classifier.
//!
//! Each sentence is read by a bidirectional LSTM whose input is the word
//! vector plus two indicator features (token mentions the entity, token is a
//! verb). A bilinear attention scores each contextual vector `h_i` against
//! the concatenated entity and verb summaries `h_ev`:
//! `a_i = h_iᵀ·B·h_ev + b`, normalized with a softmax. The attended vector is
//! mapped to four logits by an affine layer. Cells of the grid are
//! predicted independently of each other.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use params::{BoundLstm, BoundParams, LstmParams, ModelDims, ModelParams};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::corpus::{Distribution, DistributionGrid, ProcessExample};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("step {step} / entity {entity} out of range for a {steps}x{entities} paragraph")]
    Index {
        step: usize,
        entity: usize,
        steps: usize,
        entities: usize,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Attention-weighted sentence vector for one (step, entity) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEntityEncoding {
    pub c: Vec<f64>,
    /// One weight per token, summing to one.
    pub attention: Vec<f64>,
}

/// Tape handles for one encoded cell.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub c: Var,
    pub attention: Var,
    pub probs: Var,
}

fn check_cell(example: &ProcessExample, step: usize, entity: usize) -> Result<(), ModelError> {
    if step >= example.num_steps() || entity >= example.num_entities() {
        return Err(ModelError::Index {
            step,
            entity,
            steps: example.num_steps(),
            entities: example.num_entities(),
        });
    }
    Ok(())
}

/// Embedding rows of step `t`'s tokens, shared by every entity of the step.
fn step_words(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    example: &ProcessExample,
    step: usize,
) -> Result<Var, ModelError> {
    let ids: Vec<usize> = example.steps[step]
        .iter()
        .map(|tok| params.vocab.index_of(tok))
        .collect();
    Ok(tape.gather_rows(bound.embedding, &ids)?)
}

/// Runs one LSTM direction over the projected inputs `proj` (`n × 4h`,
/// already multiplied by the input weights) in the given token order.
/// Returns hidden states indexed by token position.
fn run_lstm(
    tape: &mut Tape,
    lstm: &BoundLstm,
    proj: Var,
    h: usize,
    order: impl Iterator<Item = usize>,
    n: usize,
) -> Result<Vec<Var>, ModelError> {
    let zeros = Tensor::zeros(vec![1, h]);
    let mut hidden = tape.constant(&zeros);
    let mut cell = tape.constant(&zeros);
    let mut out = vec![hidden; n];
    for pos in order {
        let x = tape.slice_rows(proj, pos, 1)?;
        let rec = tape.matmul(hidden, lstm.w_hidden)?;
        let gates = tape.add(x, rec)?;
        let gates = tape.add(gates, lstm.bias)?;
        let i = tape.slice_cols(gates, 0, h)?;
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, h, h)?;
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * h, h)?;
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * h, h)?;
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, cell)?;
        let write = tape.mul(i, g)?;
        cell = tape.add(keep, write)?;
        let squashed = tape.tanh(cell);
        hidden = tape.mul(o, squashed)?;
        out[pos] = hidden;
    }
    Ok(out)
}

/// Records the encoder and decoder for cell `(step, entity)` on `tape`.
/// `words` is the result of gathering the step's embedding rows.
fn cell_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    words: Var,
    example: &ProcessExample,
    step: usize,
    entity: usize,
) -> Result<CellVars, ModelError> {
    let n = example.steps[step].len();
    let entity_tokens = example.entity_tokens(step, entity);
    let verb_tokens = example.verb_tokens(step);
    let mut flags = vec![0.0; n * 2];
    for &i in &entity_tokens {
        flags[i * 2] = 1.0;
    }
    for &i in &verb_tokens {
        flags[i * 2 + 1] = 1.0;
    }
    let flags = tape.constant(&Tensor::matrix(n, 2, flags)?);
    let inputs = tape.concat_cols(&[words, flags])?;

    let h = params.dims.direction_size();
    let proj_f = tape.matmul(inputs, bound.lstm_forward.w_input)?;
    let proj_b = tape.matmul(inputs, bound.lstm_backward.w_input)?;
    let fwd = run_lstm(tape, &bound.lstm_forward, proj_f, h, 0..n, n)?;
    let bwd = run_lstm(tape, &bound.lstm_backward, proj_b, h, (0..n).rev(), n)?;
    let rows = fwd
        .into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat_cols(&[f, b]))
        .collect::<Result<Vec<_>, _>>()?;
    let states = tape.concat_rows(&rows)?;

    let h_entity = tape.mean_rows(states, &entity_tokens)?;
    let h_verb = tape.mean_rows(states, &verb_tokens)?;
    let h_ev = tape.concat_cols(&[h_entity, h_verb])?;
    let h_ev_col = tape.transpose(h_ev);
    let projected = tape.matmul(bound.attention, h_ev_col)?;
    let scores = tape.matmul(states, projected)?;
    let scores = tape.add(scores, bound.attention_bias)?;
    let attention = tape.softmax(scores)?;
    let weights = tape.transpose(attention);
    let c = tape.matmul(weights, states)?;

    let probs = decode_on_tape(tape, bound.decoder, bound.decoder_bias, c)?;
    Ok(CellVars {
        c,
        attention,
        probs,
    })
}

fn decode_on_tape(tape: &mut Tape, weight: Var, bias: Var, c: Var) -> Result<Var, ModelError> {
    let logits = tape.matmul(c, weight)?;
    let logits = tape.add(logits, bias)?;
    Ok(tape.softmax(logits)?)
}

/// Records the full grid for `example`. Returns one probability node per
/// cell in row-major (step, entity) order.
pub fn grid_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    example: &ProcessExample,
) -> Result<Vec<Var>, ModelError> {
    let mut cells = Vec::with_capacity(example.num_steps() * example.num_entities());
    for step in 0..example.num_steps() {
        let words = step_words(tape, params, bound, example, step)?;
        for entity in 0..example.num_entities() {
            cells.push(cell_on_tape(tape, params, bound, words, example, step, entity)?.probs);
        }
    }
    Ok(cells)
}

pub fn encode(
    params: &ModelParams,
    example: &ProcessExample,
    step: usize,
    entity: usize,
) -> Result<StepEntityEncoding, ModelError> {
    check_cell(example, step, entity)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let words = step_words(&mut tape, params, &bound, example, step)?;
    let vars = cell_on_tape(&mut tape, params, &bound, words, example, step, entity)?;
    Ok(StepEntityEncoding {
        c: tape.value(vars.c).to_vec(),
        attention: tape.value(vars.attention).to_vec(),
    })
}

pub fn decode(params: &ModelParams, enc: &StepEntityEncoding) -> Result<Distribution, ModelError> {
    let mut tape = Tape::new();
    let weight = tape.constant(&params.decoder);
    let bias = tape.constant(&params.decoder_bias);
    let c = tape.constant(&Tensor::row(enc.c.clone()));
    let probs = decode_on_tape(&mut tape, weight, bias, c)?;
    Ok(to_distribution(tape.value(probs)))
}

/// Distribution grid for one paragraph. Pure in `params` and `example`.
pub fn predict_grid(
    params: &ModelParams,
    example: &ProcessExample,
) -> Result<DistributionGrid, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let cells = grid_on_tape(&mut tape, params, &bound, example)?;
    let mut grid = DistributionGrid::filled(example.num_steps(), example.num_entities(), [0.0; 4]);
    for (k, var) in cells.into_iter().enumerate() {
        let (t, j) = (k / example.num_entities(), k % example.num_entities());
        grid.set(t, j, to_distribution(tape.value(var)));
    }
    Ok(grid)
}

fn to_distribution(values: &[f64]) -> Distribution {
    values
        .try_into()
        .expect("decoder emits exactly four values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, Mention, Vocabulary};

    fn tiny_example() -> ProcessExample {
        ProcessExample {
            id: "ex".into(),
            topic: "t".into(),
            steps: vec![
                vec!["the".into(), "water".into(), "moves".into()],
                vec!["sugar".into(), "forms".into()],
            ],
            entities: vec![
                Entity {
                    name: "water".into(),
                    mentions: vec![Mention {
                        step: 0,
                        start: 1,
                        end: 2,
                    }],
                },
                Entity {
                    name: "sugar".into(),
                    mentions: vec![Mention {
                        step: 1,
                        start: 0,
                        end: 1,
                    }],
                },
            ],
            verbs: vec![(0, 2), (1, 1)],
            gold: None,
        }
    }

    fn tiny_params(seed: u64) -> ModelParams {
        let vocab = Vocabulary::from_examples([&tiny_example()]);
        ModelParams::init(ModelDims::new(4, 4).unwrap(), vocab, seed)
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn zero_bilinear_gives_uniform_attention() {
        let mut params = tiny_params(1);
        params.attention = Tensor::zeros(params.attention.shape().to_vec());
        params.attention_bias = Tensor::scalar(0.0);
        let enc = encode(&params, &tiny_example(), 0, 0).unwrap();
        assert_close(&enc.attention, &[1.0 / 3.0; 3], 1e-15);
        assert_eq!(enc.c.len(), 4);
    }

    #[test]
    fn single_token_sentence() {
        let mut ex = tiny_example();
        ex.steps[0] = vec!["water".into()];
        ex.entities[0].mentions[0] = Mention {
            step: 0,
            start: 0,
            end: 1,
        };
        ex.verbs = vec![(1, 1)];
        let params = tiny_params(2);
        let enc = encode(&params, &ex, 0, 0).unwrap();
        assert_eq!(enc.attention, vec![1.0]);
        assert_eq!(enc.c.len(), 4);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let params = tiny_params(1);
        assert!(matches!(
            encode(&params, &tiny_example(), 2, 0),
            Err(ModelError::Index { .. })
        ));
        assert!(matches!(
            encode(&params, &tiny_example(), 0, 5),
            Err(ModelError::Index { .. })
        ));
    }

    #[test]
    fn zero_decoder_is_uniform() {
        let mut params = tiny_params(3);
        params.decoder = Tensor::zeros(params.decoder.shape().to_vec());
        params.decoder_bias = Tensor::zeros(vec![1, 4]);
        let enc = encode(&params, &tiny_example(), 1, 1).unwrap();
        assert_eq!(decode(&params, &enc).unwrap(), [0.25; 4]);
    }

    #[test]
    fn dominant_bias_selects_move() {
        let mut params = tiny_params(3);
        params.decoder = Tensor::zeros(params.decoder.shape().to_vec());
        params.decoder_bias = Tensor::row(vec![10.0, 0.0, 0.0, 0.0]);
        let enc = encode(&params, &tiny_example(), 0, 1).unwrap();
        let dist = decode(&params, &enc).unwrap();
        assert!(dist[0] > 0.9998);
    }

    #[test]
    fn one_by_one_grid() {
        let mut ex = tiny_example();
        ex.steps.truncate(1);
        ex.entities.truncate(1);
        ex.verbs.truncate(1);
        let grid = predict_grid(&tiny_params(4), &ex).unwrap();
        assert_eq!((grid.rows(), grid.cols()), (1, 1));
        assert!((grid.get(0, 0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entity_permutation_permutes_columns() {
        let params = tiny_params(5);
        let ex = tiny_example();
        let mut swapped = ex.clone();
        swapped.entities.swap(0, 1);
        let a = predict_grid(&params, &ex).unwrap();
        let b = predict_grid(&params, &swapped).unwrap();
        assert_eq!(a.select_columns(&[1, 0]), b);
    }

    #[test]
    fn deleting_an_entity_leaves_other_columns() {
        let params = tiny_params(6);
        let ex = tiny_example();
        let mut fewer = ex.clone();
        fewer.entities.remove(0);
        let a = predict_grid(&params, &ex).unwrap();
        let b = predict_grid(&params, &fewer).unwrap();
        assert_eq!(a.select_columns(&[1]), b);
    }

    #[test]
    fn prediction_is_pure() {
        let params = tiny_params(7);
        let ex = tiny_example();
        assert_eq!(
            predict_grid(&params, &ex).unwrap(),
            predict_grid(&params, &ex).unwrap()
        );
    }

    #[test]
    fn absent_entity_still_predicted() {
        let params = tiny_params(8);
        let mut ex = tiny_example();
        ex.entities.push(Entity {
            name: "ghost".into(),
            mentions: Vec::new(),
        });
        let grid = predict_grid(&params, &ex).unwrap();
        for t in 0..2 {
            let d = grid.get(t, 2);
            assert!(d.iter().all(|p| *p > 0.0));
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
