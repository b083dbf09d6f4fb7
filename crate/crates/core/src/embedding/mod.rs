//! Word embeddings: SGNS training and word2vec text-format interchange.

mod io;
mod sampler;
mod sgns;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

pub use io::{
    export_tsv, load_embeddings, load_embeddings_file, load_matrix, load_matrix_file, save_embeddings,
    save_embeddings_file, save_matrix, save_matrix_file,
};
pub use sampler::{sample_negatives, NegativeSampler};
pub use sgns::{train_sgns, train_sgns_with_stats, TrainStats};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// Dense `V x D` center-word vectors indexed by a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vocab: Vocabulary,
    vectors: Array2<f64>,
}

impl EmbeddingSet {
    pub fn new(vocab: Vocabulary, vectors: Array2<f64>) -> Result<Self> {
        let (rows, dim) = vectors.dim();
        if rows != vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                found: rows,
            });
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("embedding contains non-finite entries".into()));
        }
        Ok(Self { vocab, vectors })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, id: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(id)
    }

    pub fn get(&self, token: &str) -> Option<ArrayView1<'_, f64>> {
        self.vocab.id(token).map(|id| self.vector(id))
    }

    /// Every vector multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            vocab: self.vocab.clone(),
            vectors: &self.vectors * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgnsConfig {
    pub dim: usize,
    /// Maximum context offset; each center draws its reach from `[1, window]`.
    pub window: usize,
    /// Noise samples per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub subsample_threshold: Option<f64>,
    pub min_count: u64,
    pub seed: u64,
    /// More than one worker trains lock-free and is not reproducible.
    pub workers: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 50,
            initial_lr: 0.025,
            min_lr: 1e-4,
            subsample_threshold: None,
            min_count: 1,
            seed: 1,
            workers: 1,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if self.negatives == 0 {
            return fail("negatives must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr && self.initial_lr.is_finite()) {
            return fail("learning rates must satisfy 0 < min_lr <= initial_lr");
        }
        if self.min_count == 0 {
            return fail("min_count must be at least 1");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if let Some(t) = self.subsample_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return fail("subsample_threshold must be positive");
            }
        }
        Ok(())
    }
}
