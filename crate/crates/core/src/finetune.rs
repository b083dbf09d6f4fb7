//! Supervised training of the reweighting matrix `W` with frozen embeddings.
//!
//! Loss per item: `−log softmax(τ·s)[c] + λ‖W − I‖²_F`, where `s` are the
//! model's cosine scores and `c` the labelled answer.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qamodel::{argmax_first, PooledItem, QaItem, QaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// τ, multiplies cosine scores before the softmax.
    pub loss_scale: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// λ, weight of `‖W − I‖²_F`.
    pub identity_penalty: f64,
    /// Epochs without a val-accuracy improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            loss_scale: 10.0,
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 64,
            identity_penalty: 0.0,
            early_stop_patience: 10,
            seed: 1,
            workers: 1,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.loss_scale > 0.0 && self.loss_scale.is_finite()) {
            return fail("loss_scale must be positive");
        }
        // zero learning rate and zero epochs are allowed: both mean "no update"
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be non-negative");
        }
        if !(self.identity_penalty >= 0.0 && self.identity_penalty.is_finite()) {
            return fail("identity_penalty must be non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Loss and gradient for one pooled item at `w`.
///
/// Degenerate branches (zero after projection) score 0 and pass no gradient.
pub fn loss_and_grad(
    pooled: &PooledItem,
    label: usize,
    w: &Array2<f64>,
    cfg: &FinetuneConfig,
) -> (f64, Array2<f64>) {
    let tau = cfg.loss_scale;
    let (q_hat, q_norm) = project(w, &pooled.question);
    let projected: Vec<(Array1<f64>, f64)> = pooled.answers.iter().map(|a| project(w, a)).collect();

    let logits: Vec<f64> = projected.iter().map(|(a_hat, _)| tau * q_hat.dot(a_hat)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let log_sum = max + sum.ln();

    let deviation = w - &Array2::<f64>::eye(w.nrows());
    let penalty = cfg.identity_penalty * deviation.iter().map(|x| x * x).sum::<f64>();
    let loss = log_sum - logits[label] + penalty;

    // dL/dz_i = softmax_i − 1[i = c]
    let dz: Vec<f64> = exp
        .iter()
        .enumerate()
        .map(|(i, e)| e / sum - if i == label { 1.0 } else { 0.0 })
        .collect();

    let mut grad = deviation * (2.0 * cfg.identity_penalty);
    let mut d_q_hat = Array1::zeros(w.nrows());
    for ((a_hat, a_norm), (g, a_raw)) in projected.iter().zip(dz.iter().zip(&pooled.answers)) {
        if *g == 0.0 {
            continue;
        }
        d_q_hat.scaled_add(tau * g, a_hat);
        if *a_norm > 0.0 && q_norm > 0.0 {
            let d_a_hat = &q_hat * (tau * g);
            let d_r = normalization_backward(a_hat, *a_norm, &d_a_hat);
            add_outer(&mut grad, &d_r, a_raw);
        }
    }
    if q_norm > 0.0 {
        let d_p = normalization_backward(&q_hat, q_norm, &d_q_hat);
        add_outer(&mut grad, &d_p, &pooled.question);
    }
    (loss, grad)
}

/// `(Wv / ‖Wv‖, ‖Wv‖)`, zero vector and 0 when `Wv = 0`.
fn project(w: &Array2<f64>, v: &Array1<f64>) -> (Array1<f64>, f64) {
    let p = w.dot(v);
    let norm = p.dot(&p).sqrt();
    if norm == 0.0 {
        (p, 0.0)
    } else {
        (p / norm, norm)
    }
}

/// Pulls `upstream = dL/dx̂` back through `x̂ = x/‖x‖`: `(I − x̂x̂ᵀ) upstream / ‖x‖`.
fn normalization_backward(x_hat: &Array1<f64>, norm: f64, upstream: &Array1<f64>) -> Array1<f64> {
    (upstream - &(x_hat * x_hat.dot(upstream))) / norm
}

fn add_outer(m: &mut Array2<f64>, left: &Array1<f64>, right: &Array1<f64>) {
    for (mut row, &l) in m.axis_iter_mut(Axis(0)).zip(left) {
        row.scaled_add(l, right);
    }
}

pub fn finetune_loss(item: &QaItem, model: &QaModel, cfg: &FinetuneConfig) -> Result<f64> {
    let label = item.label()?;
    Ok(loss_and_grad(&model.pool(item), label, model.reweight(), cfg).0)
}

pub fn finetune_grad(item: &QaItem, model: &QaModel, cfg: &FinetuneConfig) -> Result<Array2<f64>> {
    let label = item.label()?;
    Ok(loss_and_grad(&model.pool(item), label, model.reweight(), cfg).1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over trainable train items.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// `None` when no validation items were given.
    pub val_accuracy: Option<f64>,
}

/// Label reads made while computing parameter updates, by item origin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAudit {
    pub train_update_reads: u64,
    pub val_update_reads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Row 0 is the untrained model (`W = I`).
    pub epochs: Vec<EpochMetrics>,
    /// Earliest epoch with the best val accuracy (last epoch without val items).
    pub chosen_epoch: usize,
    pub stopped_early: bool,
    pub n_trainable: usize,
    pub label_audit: LabelAudit,
    /// `W` at the chosen epoch.
    #[serde(with = "matrix_rows")]
    pub reweight: Array2<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Origin {
    Train,
    Val,
}

struct Labeled {
    pooled: PooledItem,
    label: usize,
    origin: Origin,
}

impl Labeled {
    fn label_for_update(&self, audit: &mut LabelAudit) -> usize {
        match self.origin {
            Origin::Train => audit.train_update_reads += 1,
            Origin::Val => audit.val_update_reads += 1,
        }
        self.label
    }

    fn correct(&self, w: &Array2<f64>) -> bool {
        argmax_first(&self.pooled.scores(w).0) == self.label
    }

    /// Question and labelled answer both pool to nonzero vectors.
    fn trainable(&self) -> bool {
        let nonzero = |v: &Array1<f64>| v.iter().any(|&x| x != 0.0);
        nonzero(&self.pooled.question) && nonzero(&self.pooled.answers[self.label])
    }
}

fn label_all(items: &[QaItem], model: &QaModel, origin: Origin) -> Result<Vec<Labeled>> {
    items
        .iter()
        .map(|item| {
            Ok(Labeled {
                label: item.label()?,
                pooled: model.pool(item),
                origin,
            })
        })
        .collect()
}

fn accuracy(items: &[Labeled], w: &Array2<f64>) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    let correct = items.iter().filter(|it| it.correct(w)).count();
    Some(correct as f64 / items.len() as f64)
}

/// Mini-batch SGD on `W` from the identity, keeping the `W` of the epoch with
/// the best val accuracy. Val items are only ever scored, never used for
/// gradients. Deterministic for a fixed seed and any worker count: batch
/// gradients are summed in item order.
pub fn run_finetune(
    train_items: &[QaItem],
    val_items: &[QaItem],
    model: &QaModel,
    cfg: &FinetuneConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_items.is_empty() {
        return Err(Error::EmptyItems("fine-tuning needs at least one training item"));
    }
    let train = label_all(train_items, model, Origin::Train)?;
    let val = label_all(val_items, model, Origin::Val)?;
    let trainable: Vec<usize> = (0..train.len()).filter(|&i| train[i].trainable()).collect();
    let mut order = trainable.clone();
    if order.is_empty() {
        return Err(Error::NoTrainableItems);
    }

    let dim = model.dim();
    let mut w: Array2<f64> = Array2::eye(dim);
    let mut audit = LabelAudit::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mean_loss = |w: &Array2<f64>| {
        let total: f64 = trainable
            .iter()
            .map(|&i| loss_and_grad(&train[i].pooled, train[i].label, w, cfg).0)
            .sum();
        total / trainable.len() as f64
    };

    let metrics = |epoch: usize, w: &Array2<f64>, loss: f64| EpochMetrics {
        epoch,
        train_loss: loss,
        train_accuracy: accuracy(&train, w).expect("train is nonempty"),
        val_accuracy: accuracy(&val, w),
    };

    let initial_loss = mean_loss(&w);
    let mut epochs = vec![metrics(0, &w, initial_loss)];
    let mut best = (epochs[0].val_accuracy, 0usize, w.clone());
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].label_for_update(&mut audit)).collect();
            let grad_of = |(&i, &label): (&usize, &usize)| loss_and_grad(&train[i].pooled, label, &w, cfg).1;
            let grads: Vec<Array2<f64>> = if cfg.workers > 1 {
                batch.par_iter().zip(labels.par_iter()).map(grad_of).collect()
            } else {
                batch.iter().zip(labels.iter()).map(grad_of).collect()
            };
            let mut sum = Array2::zeros((dim, dim));
            for g in &grads {
                sum += g;
            }
            w.scaled_add(-cfg.learning_rate / batch.len() as f64, &sum);
        }

        let loss = mean_loss(&w);
        let m = metrics(epoch, &w, loss);
        let improved = match (m.val_accuracy, best.0) {
            (Some(acc), Some(best_acc)) => acc > best_acc,
            _ => true,
        };
        if improved {
            best = (m.val_accuracy, epoch, w.clone());
        }
        epochs.push(m);
        if best.0.is_some() && epoch - best.1 >= cfg.early_stop_patience.max(1) {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    Ok(TrainReport {
        epochs,
        chosen_epoch: best.1,
        stopped_early,
        n_trainable: trainable.len(),
        label_audit: audit,
        reweight: best.2,
    })
}

mod matrix_rows {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::embedding::EmbeddingSet;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn item(q: &str, answers: [&str; 5], correct: Option<usize>) -> QaItem {
        QaItem {
            qid: format!("{q}:{}", answers.join("|")),
            movie_id: "m".into(),
            question: q.into(),
            answers: answers.map(String::from),
            correct_index: correct,
            split: "train".into(),
        }
    }

    fn embeddings(rows: Vec<(String, Vec<f64>)>) -> EmbeddingSet {
        let dim = rows[0].1.len();
        let vocab = Vocabulary::from_counts(rows.iter().map(|(t, _)| (t.clone(), 1)), 1).unwrap();
        let n = rows.len();
        let flat = rows.into_iter().flat_map(|(_, v)| v).collect();
        EmbeddingSet::new(vocab, Array2::from_shape_vec((n, dim), flat).unwrap()).unwrap()
    }

    fn basis_model() -> QaModel {
        let rows = (0..5)
            .map(|i| {
                let mut v = vec![0.0; 5];
                v[i] = 1.0;
                (format!("t{i}"), v)
            })
            .collect();
        QaModel::untrained(embeddings(rows))
    }

    #[test]
    fn uniform_scores_give_ln5() {
        let model = basis_model();
        // question orthogonal to every answer: all scores 0
        let it = item("t0", ["t1", "t2", "t3", "t4", "t1"], Some(2));
        let cfg = FinetuneConfig { loss_scale: 3.0, ..Default::default() };
        assert!((finetune_loss(&it, &model, &cfg).unwrap() - 5f64.ln()).abs() < 1e-12);
        let penalized = model.with_reweight(Array2::eye(5) * 2.0).unwrap();
        let cfg = FinetuneConfig { identity_penalty: 0.5, ..cfg };
        let expected = 5f64.ln() + 0.5 * 5.0;
        assert!((finetune_loss(&it, &penalized, &cfg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn hand_set_softmax() {
        let model = basis_model();
        let it = item("t0", ["t0", "t1", "t2", "t3", "t4"], Some(0));
        let cfg = FinetuneConfig { loss_scale: 1.0, ..Default::default() };
        let e = std::f64::consts::E;
        let expected = -(e / (e + 4.0)).ln();
        let got = finetune_loss(&it, &model, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.9048).abs() < 1e-4);
    }

    #[test]
    fn saturated_softmax_leaves_only_penalty() {
        let model = basis_model();
        let it = item("t0", ["t0", "t1", "t2", "t3", "t4"], Some(0));
        let cfg = FinetuneConfig { loss_scale: 200.0, ..Default::default() };
        assert!(finetune_loss(&it, &model, &cfg).unwrap() < 1e-80);
    }

    #[test]
    fn zero_embeddings_leave_only_penalty_gradient() {
        let zeros = embeddings(vec![("z".into(), vec![0.0; 3])]);
        let w = array![[1.2, 0.1, 0.0], [0.0, 0.9, -0.3], [0.4, 0.0, 1.0]];
        let model = QaModel::new(zeros, w.clone()).unwrap();
        let it = item("z", ["z"; 5], Some(1));
        let cfg = FinetuneConfig { identity_penalty: 0.7, ..Default::default() };
        let g = finetune_grad(&it, &model, &cfg).unwrap();
        let expected = (&w - &Array2::<f64>::eye(3)) * 1.4;
        assert!((&g - &expected).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn identical_answers_have_no_cross_entropy_gradient() {
        let es = embeddings(vec![
            ("q".into(), vec![0.3, -1.0, 2.0]),
            ("a".into(), vec![1.0, 0.5, 0.2]),
        ]);
        let w = array![[1.1, 0.2, 0.0], [0.0, 0.8, 0.1], [0.3, 0.0, 1.0]];
        let model = QaModel::new(es, w.clone()).unwrap();
        let it = item("q", ["a"; 5], Some(3));
        let plain = finetune_grad(&it, &model, &FinetuneConfig::default()).unwrap();
        assert!(plain.iter().all(|x| x.abs() < 1e-12), "{plain}");
        let cfg = FinetuneConfig { identity_penalty: 0.25, ..Default::default() };
        let g = finetune_grad(&it, &model, &cfg).unwrap();
        let expected = (&w - &Array2::<f64>::eye(3)) * 0.5;
        assert!((&g - &expected).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn missing_label() {
        let model = basis_model();
        let it = item("t0", ["t0", "t1", "t2", "t3", "t4"], None);
        let cfg = FinetuneConfig::default();
        assert!(matches!(finetune_loss(&it, &model, &cfg), Err(Error::MissingLabel { .. })));
        assert!(matches!(finetune_grad(&it, &model, &cfg), Err(Error::MissingLabel { .. })));
        assert!(matches!(
            run_finetune(&[it], &[], &model, &cfg),
            Err(Error::MissingLabel { .. })
        ));
    }

    /// Random 3-D world where the labelled answer is not the untrained winner.
    fn random_world(seed: u64) -> (QaModel, QaItem) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..6)
            .map(|i| (format!("w{i}"), (0..3).map(|_| rng.sample(StandardNormal)).collect()))
            .collect();
        let model = QaModel::untrained(embeddings(rows));
        let it = item("w0", ["w1", "w2", "w3", "w4", "w5"], Some(0));
        (model, it)
    }

    #[test]
    fn single_item_learns() {
        for seed in 0..20 {
            let (model, it) = random_world(seed);
            let cfg = FinetuneConfig {
                epochs: 2000,
                learning_rate: 0.5,
                early_stop_patience: 1000,
                ..Default::default()
            };
            let report = run_finetune(std::slice::from_ref(&it), &[], &model, &cfg).unwrap();
            let first = report.epochs[0].train_loss;
            let last = report.epochs.last().unwrap().train_loss;
            assert!(last < first, "seed {seed}: {first} -> {last}");
            let tuned = model.with_reweight(report.reweight.clone()).unwrap();
            assert_eq!(crate::qamodel::score_qa(&it, &tuned).predicted_index, 0, "seed {seed}");
        }
    }

    #[test]
    fn zero_epochs_or_zero_rate_keep_identity() {
        let (model, it) = random_world(3);
        let items = vec![it];
        for cfg in [
            FinetuneConfig { epochs: 0, ..Default::default() },
            FinetuneConfig { learning_rate: 0.0, epochs: 5, ..Default::default() },
        ] {
            let report = run_finetune(&items, &items, &model, &cfg).unwrap();
            assert_eq!(report.reweight, Array2::<f64>::eye(3));
            assert_eq!(report.chosen_epoch, 0);
        }
    }

    #[test]
    fn all_degenerate_training_set() {
        let model = basis_model();
        let it = item("unknown", ["t0", "t1", "t2", "t3", "t4"], Some(0));
        assert!(matches!(
            run_finetune(&[it], &[], &model, &FinetuneConfig::default()),
            Err(Error::NoTrainableItems)
        ));
    }

    #[test]
    fn report_serializes_with_matrix() {
        let (model, it) = random_world(1);
        let cfg = FinetuneConfig { epochs: 2, ..Default::default() };
        let report = run_finetune(&[it], &[], &model, &cfg).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: TrainReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pooled(dim: usize) -> impl Strategy<Value = PooledItem> {
            let v = move || prop::collection::vec(-1.0f64..1.0, dim).prop_map(Array1::from);
            (v(), prop::array::uniform5(v())).prop_map(|(question, answers)| PooledItem { question, answers })
        }

        fn case() -> impl Strategy<Value = (PooledItem, usize, Array2<f64>, f64, f64)> {
            (3usize..6).prop_flat_map(|dim| {
                (
                    pooled(dim),
                    0usize..5,
                    prop::collection::vec(-0.3f64..0.3, dim * dim),
                    0.5f64..10.0,
                    0.0f64..1.0,
                )
                    .prop_map(move |(p, c, noise, tau, lambda)| {
                        let w = Array2::eye(dim) + Array2::from_shape_vec((dim, dim), noise).unwrap();
                        (p, c, w, tau, lambda)
                    })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn loss_is_bounded_below((p, c, w, tau, lambda) in case()) {
                let cfg = FinetuneConfig { loss_scale: tau, identity_penalty: lambda, ..Default::default() };
                let (loss, grad) = loss_and_grad(&p, c, &w, &cfg);
                prop_assert!(loss >= 0.0 && loss.is_finite());
                prop_assert!(grad.iter().all(|g| g.is_finite()));
            }

            #[test]
            fn gradient_matches_central_differences((p, c, w, tau, lambda) in case()) {
                let cfg = FinetuneConfig { loss_scale: tau, identity_penalty: lambda, ..Default::default() };
                let (_, grad) = loss_and_grad(&p, c, &w, &cfg);
                let h = 1e-5;
                for ((i, j), &g) in grad.indexed_iter() {
                    let mut plus = w.clone();
                    plus[[i, j]] += h;
                    let mut minus = w.clone();
                    minus[[i, j]] -= h;
                    let fd = (loss_and_grad(&p, c, &plus, &cfg).0 - loss_and_grad(&p, c, &minus, &cfg).0) / (2.0 * h);
                    prop_assert!((g - fd).abs() <= 1e-5 * g.abs().max(fd.abs()).max(1.0), "{} vs {}", g, fd);
                }
            }
        }
    }
}
