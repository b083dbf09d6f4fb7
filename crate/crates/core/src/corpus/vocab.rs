use std::collections::HashMap;

use super::{tokenize, Document};
use crate::error::{Error, Result};

/// Exponent applied to unigram counts to form the negative-sampling distribution.
pub const NOISE_EXPONENT: f64 = 0.75;

/// Dense token index with counts and the unigram^0.75 noise distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, usize>,
    counts: Vec<u64>,
    min_count: u64,
    noise: Vec<f64>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, count)` pairs, keeping their order as
    /// the index order. Tokens below `min_count` are dropped.
    pub fn from_counts<I, S>(entries: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        if min_count == 0 {
            return Err(Error::InvalidConfig("min_count must be at least 1".into()));
        }
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        let mut token_to_id = HashMap::new();
        for (token, count) in entries {
            if count < min_count {
                continue;
            }
            let token = token.into();
            if token_to_id.contains_key(&token) {
                return Err(Error::DuplicateToken {
                    token,
                    line: tokens.len() + 1,
                });
            }
            token_to_id.insert(token.clone(), tokens.len());
            tokens.push(token);
            counts.push(count);
        }
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }

        let weights: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64).powf(NOISE_EXPONENT))
            .collect();
        let total: f64 = weights.iter().sum();
        let noise = weights.iter().map(|w| w / total).collect();

        Ok(Self {
            tokens,
            token_to_id,
            counts,
            min_count,
            noise,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn noise_distribution(&self) -> &[f64] {
        &self.noise
    }

    /// Maps a token stream to ids, dropping out-of-vocabulary tokens.
    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        tokens.into_iter().filter_map(|t| self.id(t)).collect()
    }
}

/// Counts every token of every document and keeps those seen `min_count` times.
///
/// Index order is by descending count, ties broken lexicographically, so the
/// result does not depend on document order.
pub fn build_vocab(docs: &[Document], min_count: u64) -> Result<Vocabulary> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for token in tokenize(&doc.text) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_counts(entries, min_count)
}
