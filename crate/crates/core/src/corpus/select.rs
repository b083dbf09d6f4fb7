use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, SourceKind, SplitTag};
use crate::error::{Error, Result};

/// Which documents feed embedding training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSelector {
    pub include_splits: BTreeSet<SplitTag>,
    pub include_kinds: BTreeSet<SourceKind>,
    /// Number of extra `general` documents to sample on top of the base match.
    #[serde(default)]
    pub extra_plot_budget: Option<usize>,
}

impl CorpusSelector {
    pub fn new(
        splits: impl IntoIterator<Item = SplitTag>,
        kinds: impl IntoIterator<Item = SourceKind>,
    ) -> Self {
        Self {
            include_splits: splits.into_iter().collect(),
            include_kinds: kinds.into_iter().collect(),
            extra_plot_budget: None,
        }
    }

    /// Plots of the given splits.
    pub fn plots(splits: impl IntoIterator<Item = SplitTag>) -> Self {
        Self::new(splits, [SourceKind::Plot])
    }

    pub fn with_extra(mut self, budget: usize) -> Self {
        self.extra_plot_budget = Some(budget);
        self
    }

    pub fn matches(&self, doc: &Document) -> bool {
        self.include_splits.contains(&doc.split_tag) && self.include_kinds.contains(&doc.source_kind)
    }

    /// Short label such as `train+val` or `train+val+200gen`.
    pub fn label(&self) -> String {
        let mut label = self
            .include_splits
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join("+");
        if let Some(b) = self.extra_plot_budget.filter(|&b| b > 0) {
            label.push_str(&format!("+{b}gen"));
        }
        label
    }

    pub fn validate(&self) -> Result<()> {
        if self.include_splits.is_empty() {
            return Err(Error::InvalidConfig("include_splits must not be empty".into()));
        }
        if self.include_kinds.is_empty() {
            return Err(Error::InvalidConfig("include_kinds must not be empty".into()));
        }
        Ok(())
    }
}

/// Returns every document matching the selector's splits and kinds (in input
/// order), followed by `extra_plot_budget` general documents of the selected
/// kinds drawn without replacement.
pub fn select_corpus(all_docs: &[Document], sel: &CorpusSelector, seed: u64) -> Result<Vec<Document>> {
    sel.validate()?;
    let mut out: Vec<Document> = all_docs.iter().filter(|d| sel.matches(d)).cloned().collect();

    let budget = sel.extra_plot_budget.unwrap_or(0);
    if budget == 0 {
        return Ok(out);
    }
    let pool: Vec<&Document> = all_docs
        .iter()
        .filter(|d| {
            d.split_tag == SplitTag::General
                && sel.include_kinds.contains(&d.source_kind)
                && !sel.matches(d)
        })
        .collect();
    if budget > pool.len() {
        return Err(Error::InsufficientGeneralPlots {
            requested: budget,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool.len(), budget).into_vec();
    picked.sort_unstable();
    out.extend(picked.into_iter().map(|i| pool[i].clone()));
    Ok(out)
}
