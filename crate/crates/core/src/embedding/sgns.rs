//! Skip-gram with negative sampling.
//!
//! Each center token draws an effective window `b` uniformly from
//! `[1, window]` and is paired with every token within `b` positions inside
//! the same document. For a pair (center `w`, context `c`) one SGD step
//! ascends `log σ(u_c·v_w) + Σ_k log σ(−u_{n_k}·v_w)` with `n_k` drawn from
//! the unigram^0.75 noise distribution.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingSet, NegativeSampler, SgnsConfig};
use crate::corpus::{build_vocab, tokenize, Document, Vocabulary};
use crate::error::Result;

/// Mean per-pair loss (negated objective) of each epoch, measured before
/// each update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub epoch_mean_loss: Vec<f64>,
    pub epoch_pairs: Vec<u64>,
}

pub fn train_sgns(docs: &[Document], cfg: &SgnsConfig) -> Result<EmbeddingSet> {
    train_sgns_with_stats(docs, cfg).map(|(es, _)| es)
}

pub fn train_sgns_with_stats(docs: &[Document], cfg: &SgnsConfig) -> Result<(EmbeddingSet, TrainStats)> {
    cfg.validate()?;
    let vocab = build_vocab(docs, cfg.min_count)?;
    let sentences: Vec<Vec<u32>> = docs
        .iter()
        .map(|d| {
            tokenize(&d.text)
                .iter()
                .filter_map(|t| vocab.id(t).map(|i| i as u32))
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();

    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..vocab.len() * dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    let mut output = vec![0.0; vocab.len() * dim];

    let tokens_per_epoch: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let shared = Shared {
        cfg,
        sampler: NegativeSampler::new(&vocab),
        keep_prob: cfg.subsample_threshold.map(|t| keep_probabilities(&vocab, t)),
        total_tokens: (tokens_per_epoch * cfg.epochs as u64).max(1),
        progress: AtomicU64::new(0),
    };

    let mut stats = TrainStats {
        epoch_mean_loss: vec![0.0; cfg.epochs],
        epoch_pairs: vec![0; cfg.epochs],
    };
    let mut epoch_loss = vec![0.0; cfg.epochs];

    if cfg.workers <= 1 || sentences.len() < 2 {
        let mut worker = Worker::new(&shared, rng);
        let mut params = DenseParams {
            input: &mut input,
            output: &mut output,
        };
        for epoch in 0..cfg.epochs {
            let (loss, pairs) = worker.run_epoch(&sentences, &mut params);
            epoch_loss[epoch] += loss;
            stats.epoch_pairs[epoch] += pairs;
        }
    } else {
        let atomic_in: Vec<AtomicU64> = input.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
        let atomic_out: Vec<AtomicU64> = output.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
        let chunk = sentences.len().div_ceil(cfg.workers);
        let seeds: Vec<u64> = (0..cfg.workers).map(|_| rng.random()).collect();

        let per_worker: Vec<(Vec<f64>, Vec<u64>)> = thread::scope(|scope| {
            let handles: Vec<_> = sentences
                .chunks(chunk)
                .zip(&seeds)
                .map(|(part, &seed)| {
                    let shared = &shared;
                    let (atomic_in, atomic_out) = (&atomic_in, &atomic_out);
                    scope.spawn(move || {
                        let mut worker = Worker::new(shared, ChaCha8Rng::seed_from_u64(seed));
                        let mut params = AtomicParams {
                            input: atomic_in,
                            output: atomic_out,
                        };
                        (0..shared.cfg.epochs)
                            .map(|_| worker.run_epoch(part, &mut params))
                            .unzip()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        });
        for (losses, pairs) in per_worker {
            for epoch in 0..cfg.epochs {
                epoch_loss[epoch] += losses[epoch];
                stats.epoch_pairs[epoch] += pairs[epoch];
            }
        }
        input = atomic_in.into_iter().map(|a| f64::from_bits(a.into_inner())).collect();
    }

    for epoch in 0..cfg.epochs {
        let pairs = stats.epoch_pairs[epoch];
        stats.epoch_mean_loss[epoch] = if pairs == 0 { 0.0 } else { epoch_loss[epoch] / pairs as f64 };
    }

    let vectors = Array2::from_shape_vec((vocab.len(), dim), input).expect("row-major V x D buffer");
    Ok((EmbeddingSet::new(vocab, vectors)?, stats))
}

/// Frequent-token keep probabilities `(sqrt(f/t) + 1) * t/f`, capped at 1.
fn keep_probabilities(vocab: &Vocabulary, threshold: f64) -> Vec<f64> {
    let total = vocab.total_count() as f64;
    vocab
        .counts()
        .iter()
        .map(|&c| {
            let f = c as f64 / total;
            (((f / threshold).sqrt() + 1.0) * threshold / f).min(1.0)
        })
        .collect()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Flat access to the center (`input`) and context (`output`) matrices.
trait Params {
    fn input(&self, i: usize) -> f64;
    fn output(&self, i: usize) -> f64;
    fn add_input(&mut self, i: usize, delta: f64);
    fn add_output(&mut self, i: usize, delta: f64);
}

struct DenseParams<'a> {
    input: &'a mut [f64],
    output: &'a mut [f64],
}

impl Params for DenseParams<'_> {
    #[inline]
    fn input(&self, i: usize) -> f64 {
        self.input[i]
    }
    #[inline]
    fn output(&self, i: usize) -> f64 {
        self.output[i]
    }
    #[inline]
    fn add_input(&mut self, i: usize, delta: f64) {
        self.input[i] += delta;
    }
    #[inline]
    fn add_output(&mut self, i: usize, delta: f64) {
        self.output[i] += delta;
    }
}

/// Lock-free shared matrices for multi-worker training. Relaxed per-component
/// loads and stores: concurrent updates to the same row may be lost, which
/// SGD tolerates.
struct AtomicParams<'a> {
    input: &'a [AtomicU64],
    output: &'a [AtomicU64],
}

impl Params for AtomicParams<'_> {
    #[inline]
    fn input(&self, i: usize) -> f64 {
        f64::from_bits(self.input[i].load(Ordering::Relaxed))
    }
    #[inline]
    fn output(&self, i: usize) -> f64 {
        f64::from_bits(self.output[i].load(Ordering::Relaxed))
    }
    #[inline]
    fn add_input(&mut self, i: usize, delta: f64) {
        let v = self.input(i) + delta;
        self.input[i].store(v.to_bits(), Ordering::Relaxed);
    }
    #[inline]
    fn add_output(&mut self, i: usize, delta: f64) {
        let v = self.output(i) + delta;
        self.output[i].store(v.to_bits(), Ordering::Relaxed);
    }
}

struct Shared<'a> {
    cfg: &'a SgnsConfig,
    sampler: NegativeSampler,
    keep_prob: Option<Vec<f64>>,
    total_tokens: u64,
    /// Tokens processed so far across all workers; drives the linear decay.
    progress: AtomicU64,
}

impl Shared<'_> {
    fn learning_rate(&self, processed: u64) -> f64 {
        let frac = (processed as f64 / self.total_tokens as f64).min(1.0);
        let lr = self.cfg.initial_lr - (self.cfg.initial_lr - self.cfg.min_lr) * frac;
        lr.max(self.cfg.min_lr)
    }
}

struct Worker<'a> {
    shared: &'a Shared<'a>,
    rng: ChaCha8Rng,
    center: Vec<f64>,
    grad: Vec<f64>,
    kept: Vec<u32>,
}

impl<'a> Worker<'a> {
    fn new(shared: &'a Shared<'a>, rng: ChaCha8Rng) -> Self {
        let dim = shared.cfg.dim;
        Self {
            shared,
            rng,
            center: vec![0.0; dim],
            grad: vec![0.0; dim],
            kept: Vec::new(),
        }
    }

    /// One pass over `sentences`; returns (summed loss, positive pairs).
    fn run_epoch<P: Params>(&mut self, sentences: &[Vec<u32>], params: &mut P) -> (f64, u64) {
        let window = self.shared.cfg.window;
        let mut loss = 0.0;
        let mut pairs = 0u64;

        for sentence in sentences {
            let start = self
                .shared
                .progress
                .fetch_add(sentence.len() as u64, Ordering::Relaxed);

            self.kept.clear();
            match &self.shared.keep_prob {
                Some(keep) => {
                    for &t in sentence {
                        if self.rng.random::<f64>() < keep[t as usize] {
                            self.kept.push(t);
                        }
                    }
                }
                None => self.kept.extend_from_slice(sentence),
            }
            let kept = std::mem::take(&mut self.kept);

            for (pos, &center) in kept.iter().enumerate() {
                let lr = self.shared.learning_rate(start + pos as u64);
                let reach = self.rng.random_range(1..=window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(kept.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    loss += self.train_pair(center as usize, kept[ctx_pos] as usize, lr, params);
                    pairs += 1;
                }
            }
            self.kept = kept;
        }
        (loss, pairs)
    }

    fn train_pair<P: Params>(&mut self, center: usize, context: usize, lr: f64, params: &mut P) -> f64 {
        let dim = self.shared.cfg.dim;
        let c0 = center * dim;
        for k in 0..dim {
            self.center[k] = params.input(c0 + k);
        }
        self.grad.fill(0.0);

        let mut loss = 0.0;
        for n in 0..=self.shared.cfg.negatives {
            let (target, label) = if n == 0 {
                (context, 1.0)
            } else {
                let t = self.shared.sampler.draw(&mut self.rng);
                if t == context {
                    continue;
                }
                (t, 0.0)
            };
            let t0 = target * dim;
            let mut dot = 0.0;
            for k in 0..dim {
                dot += self.center[k] * params.output(t0 + k);
            }
            loss -= if label > 0.0 { log_sigmoid(dot) } else { log_sigmoid(-dot) };
            let g = (label - sigmoid(dot)) * lr;
            for k in 0..dim {
                self.grad[k] += g * params.output(t0 + k);
                params.add_output(t0 + k, g * self.center[k]);
            }
        }
        for k in 0..dim {
            params.add_input(c0 + k, self.grad[k]);
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SourceKind, SplitTag};

    fn toy_corpus() -> Vec<Document> {
        (0..1000)
            .map(|i| {
                let text = if i % 2 == 0 { "a b" } else { "c d" };
                Document::new(format!("d{i}"), "m", SplitTag::Train, SourceKind::Plot, text)
            })
            .collect()
    }

    fn toy_config() -> SgnsConfig {
        SgnsConfig {
            dim: 16,
            window: 1,
            epochs: 20,
            seed: 7,
            ..SgnsConfig::default()
        }
    }

    fn cosine(es: &EmbeddingSet, x: &str, y: &str) -> f64 {
        let a = es.get(x).unwrap();
        let b = es.get(y).unwrap();
        a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    }

    /// "a x b" / "c y d": a and b share the context x, c and d share y.
    fn shared_context_corpus() -> Vec<Document> {
        (0..1000)
            .map(|i| {
                let text = if i % 2 == 0 { "a x b" } else { "c y d" };
                Document::new(format!("d{i}"), "m", SplitTag::Train, SourceKind::Plot, text)
            })
            .collect()
    }

    #[test]
    #[ignore = "pairs that only co-occur with each other end up equidistant in input space; \
                the optimum is symmetric under a<->c, b<->d, so the ordering is a coin flip"]
    fn first_order_pairs_order_similarity() {
        let es = train_sgns(&toy_corpus(), &toy_config()).unwrap();
        assert!(cosine(&es, "a", "b") > cosine(&es, "a", "c"));
        assert!(cosine(&es, "c", "d") > cosine(&es, "c", "b"));
    }

    #[test]
    fn shared_contexts_order_similarity() {
        for seed in [7, 8, 9] {
            let cfg = SgnsConfig { seed, ..toy_config() };
            let es = train_sgns(&shared_context_corpus(), &cfg).unwrap();
            assert!(cosine(&es, "a", "b") > cosine(&es, "a", "c") + 0.5, "seed {seed}");
            assert!(cosine(&es, "c", "d") > cosine(&es, "c", "b") + 0.5, "seed {seed}");
        }
    }

    #[test]
    fn shape_and_finiteness() {
        let es = train_sgns(&toy_corpus(), &toy_config()).unwrap();
        assert_eq!(es.vectors().dim(), (4, 16));
        assert!(es.vectors().iter().all(|x| x.is_finite()));
        for id in 0..es.len() {
            let v = es.vector(id);
            let norm = v.dot(&v).sqrt();
            assert!(norm.is_finite() && norm > 0.0);
        }
    }

    #[test]
    fn single_worker_is_deterministic() {
        let a = train_sgns(&toy_corpus(), &toy_config()).unwrap();
        let b = train_sgns(&toy_corpus(), &toy_config()).unwrap();
        assert_eq!(a, b);
        let c = train_sgns(&toy_corpus(), &SgnsConfig { seed: 8, ..toy_config() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn loss_decreases() {
        let (_, stats) = train_sgns_with_stats(&toy_corpus(), &toy_config()).unwrap();
        let first = stats.epoch_mean_loss[0];
        let last = *stats.epoch_mean_loss.last().unwrap();
        assert!(last < first, "first {first}, last {last}");
        // every document yields exactly one pair each way with window 1
        assert!(stats.epoch_pairs.iter().all(|&p| p == 2000));
    }

    #[test]
    fn documents_are_context_boundaries() {
        // with window 1 and one-token docs nothing pairs up
        let docs: Vec<Document> = ["a", "b", "a", "b"]
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("{i}"), "m", SplitTag::Train, SourceKind::Plot, *t))
            .collect();
        let (_, stats) = train_sgns_with_stats(&docs, &SgnsConfig { dim: 4, epochs: 2, ..SgnsConfig::default() }).unwrap();
        assert_eq!(stats.epoch_pairs, vec![0, 0]);
    }

    #[test]
    fn multi_worker_still_learns() {
        let cfg = SgnsConfig { workers: 4, ..toy_config() };
        let es = train_sgns(&shared_context_corpus(), &cfg).unwrap();
        assert!(es.vectors().iter().all(|x| x.is_finite()));
        assert!(cosine(&es, "a", "b") > cosine(&es, "a", "c") + 0.5);
    }

    #[test]
    fn subsampling_runs() {
        let cfg = SgnsConfig { subsample_threshold: Some(1e-3), ..toy_config() };
        let (_, stats) = train_sgns_with_stats(&toy_corpus(), &cfg).unwrap();
        assert!(stats.epoch_pairs[0] < 2000);
    }

    #[test]
    fn invalid_configs() {
        let docs = toy_corpus();
        for cfg in [
            SgnsConfig { dim: 0, ..toy_config() },
            SgnsConfig { window: 0, ..toy_config() },
            SgnsConfig { negatives: 0, ..toy_config() },
            SgnsConfig { epochs: 0, ..toy_config() },
            SgnsConfig { min_lr: 0.0, ..toy_config() },
            SgnsConfig { min_lr: 0.1, initial_lr: 0.01, ..toy_config() },
        ] {
            assert!(matches!(train_sgns(&docs, &cfg), Err(crate::Error::InvalidConfig(_))));
        }
        assert!(matches!(train_sgns(&[], &toy_config()), Err(crate::Error::EmptyVocabulary)));
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert!(log_sigmoid(800.0) == 0.0);
        assert!((sigmoid(2.0) - 0.8807970779778823).abs() < 1e-15);
    }
}
