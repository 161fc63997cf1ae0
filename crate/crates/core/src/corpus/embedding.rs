use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::{CorpusError, ProcessExample};

/// Lowercased token inventory. Index `len()` is reserved for unknown tokens.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut vocab = Vocabulary::default();
        for token in tokens {
            let token = token.to_lowercase();
            if !vocab.index.contains_key(&token) {
                vocab.index.insert(token.clone(), vocab.tokens.len());
                vocab.tokens.push(token);
            }
        }
        vocab
    }

    /// Sorted set of every token in the given paragraphs.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a ProcessExample>) -> Self {
        let set: BTreeSet<String> = examples
            .into_iter()
            .flat_map(|ex| ex.steps.iter().flatten())
            .map(|t| t.to_lowercase())
            .collect();
        Self::new(set)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.tokens.len()
    }

    /// Row of `token`, or [`Self::unk_index`].
    pub fn index_of(&self, token: &str) -> usize {
        self.index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))
            .copied()
            .unwrap_or(self.tokens.len())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Word vectors, one row per vocabulary entry plus a final unknown row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    vocab: Vocabulary,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    /// Uniform values in `[-1, 1]`; the fan-in of a one-hot lookup is 1.
    pub fn random(vocab: Vocabulary, dimension: usize, rng: &mut impl Rng) -> Self {
        let n = (vocab.len() + 1) * dimension;
        let vectors = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        EmbeddingTable {
            dimension,
            vocab,
            vectors,
        }
    }

    pub fn from_parts(
        vocab: Vocabulary,
        dimension: usize,
        vectors: Vec<f64>,
    ) -> Result<Self, String> {
        if dimension == 0 {
            return Err("embedding dimension must be positive".into());
        }
        if vectors.len() != (vocab.len() + 1) * dimension {
            return Err(format!(
                "expected {} rows of {} values, got {} values",
                vocab.len() + 1,
                dimension,
                vectors.len()
            ));
        }
        Ok(EmbeddingTable {
            dimension,
            vocab,
            vectors,
        })
    }

    /// Reads `token v1 ... vD` lines. The unknown vector is the mean of all
    /// loaded vectors.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut tokens = Vec::new();
        let mut vectors = Vec::new();
        let mut dimension = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default().to_lowercase();
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CorpusError::Parse {
                    line: i + 1,
                    message: format!("bad embedding value: {e}"),
                })?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    message: "embedding line needs finite values".into(),
                });
            }
            match dimension {
                None => dimension = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(CorpusError::Parse {
                        line: i + 1,
                        message: format!("expected {d} values, got {}", values.len()),
                    })
                }
                Some(_) => {}
            }
            tokens.push(token);
            vectors.push(values);
        }
        let dimension = dimension.ok_or_else(|| CorpusError::Parse {
            line: 0,
            message: "embedding file is empty".into(),
        })?;
        // first occurrence wins for duplicate tokens
        let vocab = Vocabulary::new(tokens.iter().cloned());
        let mut flat = vec![0.0; (vocab.len() + 1) * dimension];
        let mut filled = vec![false; vocab.len()];
        for (token, values) in tokens.iter().zip(&vectors) {
            let row = vocab.index_of(token);
            if !filled[row] {
                filled[row] = true;
                flat[row * dimension..(row + 1) * dimension].copy_from_slice(values);
            }
        }
        let unk = &mut flat[vocab.len() * dimension..];
        for values in &vectors {
            for (u, v) in unk.iter_mut().zip(values) {
                *u += v / vectors.len() as f64;
            }
        }
        Ok(EmbeddingTable {
            dimension,
            vocab,
            vectors: flat,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn into_parts(self) -> (Vocabulary, usize, Vec<f64>) {
        (self.vocab, self.dimension, self.vectors)
    }

    pub fn unk_vector(&self) -> &[f64] {
        let row = self.vocab.unk_index();
        &self.vectors[row * self.dimension..(row + 1) * self.dimension]
    }

    /// Never fails: unknown tokens get [`Self::unk_vector`].
    pub fn lookup(&self, token: &str) -> &[f64] {
        let row = self.vocab.index_of(token);
        &self.vectors[row * self.dimension..(row + 1) * self.dimension]
    }
}
