//! Accuracy reports, ablation grids over embedding corpora, and the
//! extra-plot sweep.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{select_corpus, CorpusSelector, Document};
use crate::embedding::{train_sgns, SgnsConfig};
use crate::error::{Error, Result};
use crate::finetune::{run_finetune, FinetuneConfig};
use crate::qamodel::{score_qa, Prediction, QaItem, QaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub n_items: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub n_degenerate: usize,
    pub predictions: Vec<Prediction>,
}

/// An [`EvalReport`] without the per-item predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub n_items: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub n_degenerate: usize,
}

impl EvalReport {
    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            label: self.label.clone(),
            n_items: self.n_items,
            n_correct: self.n_correct,
            accuracy: self.accuracy,
            n_degenerate: self.n_degenerate,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Exact-match accuracy of `model` on labelled items. Degenerate items are
/// scored like any other (all-zero scores pick index 0) and counted apart.
pub fn evaluate(items: &[QaItem], model: &QaModel) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptyItems("evaluation needs at least one item"));
    }
    let labels = items.iter().map(QaItem::label).collect::<Result<Vec<_>>>()?;
    let predictions: Vec<Prediction> = items.par_iter().map(|it| score_qa(it, model)).collect();
    let n_correct = predictions
        .iter()
        .zip(&labels)
        .filter(|(p, &l)| p.predicted_index == l)
        .count();
    Ok(EvalReport {
        label: String::new(),
        n_items: items.len(),
        n_correct,
        accuracy: n_correct as f64 / items.len() as f64,
        n_degenerate: predictions.iter().filter(|p| p.degenerate).count(),
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub selector: CorpusSelector,
    pub fine_tune: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub cells: Vec<AblationCell>,
    pub sgns: SgnsConfig,
    pub finetune: FinetuneConfig,
    /// Drives corpus sampling, embedding training and fine-tuning of every cell.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub corpus: String,
    pub n_docs: usize,
    pub vocab_size: usize,
    pub train: EvalSummary,
    pub val: EvalSummary,
    pub train_finetuned: Option<EvalSummary>,
    pub val_finetuned: Option<EvalSummary>,
    pub chosen_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Aligned plain-text grid: train/val accuracy with and without fine-tuning.
    pub fn render(&self) -> String {
        let header = ["#", "W2V corpus", "docs", "Train (w/o ft)", "Train", "Val (w/o ft)", "Val"];
        let pct = |s: &EvalSummary| format!("{:.2}", 100.0 * s.accuracy);
        let opt = |s: &Option<EvalSummary>| s.as_ref().map_or_else(|| "-".to_string(), pct);
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                [
                    (i + 1).to_string(),
                    r.corpus.clone(),
                    r.n_docs.to_string(),
                    pct(&r.train),
                    opt(&r.train_finetuned),
                    pct(&r.val),
                    opt(&r.val_finetuned),
                ]
            })
            .collect();
        render_columns(&header, &body, &[1])
    }
}

/// Right-aligned columns except those listed in `left`.
fn render_columns<const N: usize>(header: &[&str; N], rows: &[[String; N]], left: &[usize]) -> String {
    let mut widths: [usize; N] = header.map(|h| h.chars().count());
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if left.contains(&i) { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).expect("write to String");
    };
    line(header.to_vec());
    line(widths.iter().map(|&w| &"----------------------------------------"[..w.min(40)]).collect());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

/// For every cell: select the corpus, train embeddings, evaluate the untrained
/// model on train and val, then optionally fine-tune and evaluate again.
/// Cells run concurrently; each is deterministic and rows keep cell order.
pub fn run_ablation(
    spec: &AblationSpec,
    all_docs: &[Document],
    qa_train: &[QaItem],
    qa_val: &[QaItem],
) -> Result<AblationTable> {
    if spec.cells.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one cell".into()));
    }
    let rows = spec
        .cells
        .par_iter()
        .map(|cell| {
            run_cell(spec, cell, all_docs, qa_train, qa_val).map_err(|e| Error::Cell {
                cell: cell.selector.label(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}

fn run_cell(
    spec: &AblationSpec,
    cell: &AblationCell,
    all_docs: &[Document],
    qa_train: &[QaItem],
    qa_val: &[QaItem],
) -> Result<AblationRow> {
    let corpus = select_corpus(all_docs, &cell.selector, spec.seed)?;
    let sgns = SgnsConfig {
        seed: spec.seed,
        ..spec.sgns.clone()
    };
    let embeddings = Arc::new(train_sgns(&corpus, &sgns)?);
    let model = QaModel::untrained(embeddings.clone());
    let mut row = AblationRow {
        corpus: cell.selector.label(),
        n_docs: corpus.len(),
        vocab_size: embeddings.len(),
        train: evaluate(qa_train, &model)?.with_label("train").summary(),
        val: evaluate(qa_val, &model)?.with_label("val").summary(),
        train_finetuned: None,
        val_finetuned: None,
        chosen_epoch: None,
    };
    if cell.fine_tune {
        let cfg = FinetuneConfig {
            seed: spec.seed,
            ..spec.finetune.clone()
        };
        let report = run_finetune(qa_train, qa_val, &model, &cfg)?;
        let tuned = model.with_reweight(report.reweight)?;
        row.train_finetuned = Some(evaluate(qa_train, &tuned)?.with_label("train").summary());
        row.val_finetuned = Some(evaluate(qa_val, &tuned)?.with_label("val").summary());
        row.chosen_epoch = Some(report.chosen_epoch);
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub budget: usize,
    /// Base documents plus the extra general ones.
    pub total_docs: usize,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// Two columns: total documents, mean accuracy.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("plots\taccuracy\n");
        for p in &self.points {
            writeln!(out, "{}\t{:.6}", p.total_docs, p.mean_accuracy).expect("write to String");
        }
        out
    }

    pub fn render(&self) -> String {
        let header = ["budget", "plots", "mean acc", "per-seed"];
        let rows: Vec<[String; 4]> = self
            .points
            .iter()
            .map(|p| {
                [
                    p.budget.to_string(),
                    p.total_docs.to_string(),
                    format!("{:.2}", 100.0 * p.mean_accuracy),
                    p.accuracies
                        .iter()
                        .map(|a| format!("{:.2}", 100.0 * a))
                        .collect::<Vec<_>>()
                        .join(" "),
                ]
            })
            .collect();
        render_columns(&header, &rows, &[3])
    }
}

/// Untrained-model val accuracy as general documents are added to `base`.
/// Each (budget, seed) job seeds both the document sample and the embedding
/// training with `seed`.
pub fn sweep_extra_plots(
    budgets: &[usize],
    base: &CorpusSelector,
    sgns: &SgnsConfig,
    all_docs: &[Document],
    qa_val: &[QaItem],
    seeds: &[u64],
) -> Result<SweepCurve> {
    if budgets.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one budget and one seed".into()));
    }
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("sweep budgets must be sorted ascending".into()));
    }
    // fail fast before any training
    let max = *budgets.last().expect("nonempty");
    select_corpus(all_docs, &base.clone().with_extra(max), 0)?;

    let jobs: Vec<(usize, u64)> = budgets
        .iter()
        .flat_map(|&b| seeds.iter().map(move |&s| (b, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(budget, seed)| {
            let corpus = select_corpus(all_docs, &base.clone().with_extra(budget), seed)?;
            let cfg = SgnsConfig { seed, ..sgns.clone() };
            let model = QaModel::untrained(train_sgns(&corpus, &cfg)?);
            Ok((corpus.len(), evaluate(qa_val, &model)?.accuracy))
        })
        .collect::<Result<Vec<(usize, f64)>>>()?;

    let points = budgets
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&budget, chunk)| {
            let accuracies: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            SweepPoint {
                budget,
                total_docs: chunk[0].0,
                mean_accuracy: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
                accuracies,
            }
        })
        .collect();
    Ok(SweepCurve {
        seeds: seeds.to_vec(),
        points,
    })
}
