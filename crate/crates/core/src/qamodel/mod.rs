//! The question/answer-only scorer.
//!
//! Question and answers are each average-pooled over their word vectors,
//! passed through one shared linear map `W`, L2-normalized, and compared by
//! dot product. The highest-scoring answer wins; ties go to the lowest index.

mod item;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use item::{load_qa, parse_qa, write_qa, QaItem, N_ANSWERS};

use crate::corpus::tokenize;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// How out-of-vocabulary tokens enter the average.
///
/// Either way a sentence with no in-vocabulary token pools to the zero
/// vector, and because pooled vectors are L2-normalized after `W` the choice
/// never changes a score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    /// Drop them; the mean runs over in-vocabulary tokens only.
    #[default]
    Skip,
    /// Count them as zero vectors in the denominator.
    ZeroFill,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaModel {
    embeddings: Arc<EmbeddingSet>,
    reweight: Array2<f64>,
    oov_policy: OovPolicy,
}

impl QaModel {
    /// `W = I`: no question/answer supervision at all.
    pub fn untrained(embeddings: impl Into<Arc<EmbeddingSet>>) -> Self {
        let embeddings = embeddings.into();
        let dim = embeddings.dim();
        Self {
            embeddings,
            reweight: Array2::eye(dim),
            oov_policy: OovPolicy::Skip,
        }
    }

    pub fn new(embeddings: impl Into<Arc<EmbeddingSet>>, reweight: Array2<f64>) -> Result<Self> {
        let embeddings = embeddings.into();
        let dim = embeddings.dim();
        if reweight.dim() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: if reweight.nrows() != dim { reweight.nrows() } else { reweight.ncols() },
            });
        }
        if reweight.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("reweighting matrix has non-finite entries".into()));
        }
        Ok(Self {
            embeddings,
            reweight,
            oov_policy: OovPolicy::Skip,
        })
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn with_reweight(&self, reweight: Array2<f64>) -> Result<Self> {
        Self::new(self.embeddings.clone(), reweight).map(|m| m.with_oov_policy(self.oov_policy))
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn shared_embeddings(&self) -> Arc<EmbeddingSet> {
        self.embeddings.clone()
    }

    pub fn reweight(&self) -> &Array2<f64> {
        &self.reweight
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Largest absolute entry of `W - I`.
    pub fn identity_deviation(&self) -> f64 {
        self.reweight
            .indexed_iter()
            .map(|((i, j), &w)| (w - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    pub fn pool(&self, item: &QaItem) -> PooledItem {
        PooledItem::new(item, &self.embeddings, self.oov_policy)
    }
}

/// Mean of the in-vocabulary word vectors of `text`; zero when none are known.
pub fn sentence_embed(text: &str, es: &EmbeddingSet) -> Array1<f64> {
    sentence_embed_with(text, es, OovPolicy::Skip)
}

pub fn sentence_embed_with(text: &str, es: &EmbeddingSet, policy: OovPolicy) -> Array1<f64> {
    let mut sum = Array1::zeros(es.dim());
    let mut known = 0usize;
    let mut total = 0usize;
    for token in tokenize(text).iter() {
        total += 1;
        if let Some(v) = es.get(token) {
            sum += &v;
            known += 1;
        }
    }
    if known == 0 {
        return sum;
    }
    let n = match policy {
        OovPolicy::Skip => known,
        OovPolicy::ZeroFill => total,
    };
    sum / n as f64
}

/// `Wv / ‖Wv‖₂`, or the zero vector when `Wv = 0`.
pub fn project_normalize(v: &Array1<f64>, w: &Array2<f64>) -> Array1<f64> {
    let p = w.dot(v);
    let norm = p.dot(&p).sqrt();
    if norm == 0.0 {
        p
    } else {
        p / norm
    }
}

/// Pooled (pre-`W`) sentence vectors of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledItem {
    pub question: Array1<f64>,
    pub answers: [Array1<f64>; N_ANSWERS],
}

impl PooledItem {
    pub fn new(item: &QaItem, es: &EmbeddingSet, policy: OovPolicy) -> Self {
        Self {
            question: sentence_embed_with(&item.question, es, policy),
            answers: std::array::from_fn(|i| sentence_embed_with(&item.answers[i], es, policy)),
        }
    }

    /// Scores under `W` plus the degenerate flag.
    pub fn scores(&self, w: &Array2<f64>) -> ([f64; N_ANSWERS], bool) {
        let q = project_normalize(&self.question, w);
        let is_zero = |v: &Array1<f64>| v.iter().all(|&x| x == 0.0);
        let mut degenerate = is_zero(&q);
        let mut scores = [0.0; N_ANSWERS];
        for (score, a) in scores.iter_mut().zip(&self.answers) {
            let a = project_normalize(a, w);
            degenerate |= is_zero(&a);
            *score = q.dot(&a);
        }
        (scores, degenerate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub qid: String,
    pub scores: [f64; N_ANSWERS],
    pub predicted_index: usize,
    /// A question or answer pooled (or projected) to the zero vector.
    pub degenerate: bool,
}

/// Smallest index among the maximal scores.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn score_qa(item: &QaItem, model: &QaModel) -> Prediction {
    let (scores, degenerate) = model.pool(item).scores(model.reweight());
    Prediction {
        qid: item.qid.clone(),
        scores,
        predicted_index: argmax_first(&scores),
        degenerate,
    }
}

/// Writes one JSON object per prediction.
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = Vec::new();
    for p in predictions {
        serde_json::to_writer(&mut out, p).expect("Prediction serializes");
        out.write_all(b"\n").expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
