//! Easy-question removal: split a QA set by whether the untrained model
//! already answers it.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::qamodel::{score_qa, write_qa, OovPolicy, QaItem, QaModel};

/// Largest `|W - I|` entry still accepted as untrained.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasPartition {
    /// Items the untrained model gets right, sorted by qid.
    pub biased: Vec<String>,
    /// Everything else, sorted by qid.
    pub unbiased: Vec<String>,
    /// sha256 of the embeddings and reweighting matrix that produced the split.
    pub fingerprint: String,
}

pub fn partition_bias(items: &[QaItem], model: &QaModel) -> Result<BiasPartition> {
    let dev = model.identity_deviation();
    if dev > IDENTITY_TOLERANCE {
        return Err(Error::NotUntrained { max_deviation: dev });
    }
    let mut seen = HashSet::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        if !seen.insert(it.qid.as_str()) {
            return Err(Error::InvalidItem {
                line: i + 1,
                msg: format!("duplicate qid {:?}", it.qid),
            });
        }
    }
    let labels = items.iter().map(QaItem::label).collect::<Result<Vec<_>>>()?;
    let hits: Vec<bool> = items
        .par_iter()
        .zip(&labels)
        .map(|(it, &label)| score_qa(it, model).predicted_index == label)
        .collect();

    let mut biased = Vec::new();
    let mut unbiased = Vec::new();
    for (it, hit) in items.iter().zip(hits) {
        if hit { &mut biased } else { &mut unbiased }.push(it.qid.clone());
    }
    biased.sort();
    unbiased.sort();
    Ok(BiasPartition {
        biased,
        unbiased,
        fingerprint: model_fingerprint(model),
    })
}

/// Hex sha256 over vocabulary order, vector bits, `W` bits and the OOV policy.
pub fn model_fingerprint(model: &QaModel) -> String {
    let es = model.embeddings();
    let mut h = Sha256::new();
    h.update((es.len() as u64).to_le_bytes());
    h.update((es.dim() as u64).to_le_bytes());
    for (id, token) in es.vocab().tokens().iter().enumerate() {
        h.update(token.as_bytes());
        h.update([0u8]);
        for x in es.vector(id) {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    for x in model.reweight() {
        h.update(x.to_bits().to_le_bytes());
    }
    h.update(match model.oov_policy() {
        OovPolicy::Skip => b"skip".as_slice(),
        OovPolicy::ZeroFill => b"zero_fill".as_slice(),
    });
    hex::encode(h.finalize())
}

impl BiasPartition {
    /// The two subsets in qid order. Items whose qid is in neither list are
    /// dropped.
    pub fn split(&self, items: &[QaItem]) -> (Vec<QaItem>, Vec<QaItem>) {
        let by_qid: BTreeMap<&str, &QaItem> = items.iter().map(|it| (it.qid.as_str(), it)).collect();
        let pick = |ids: &[String]| ids.iter().filter_map(|q| by_qid.get(q.as_str()).map(|&it| it.clone())).collect();
        (pick(&self.biased), pick(&self.unbiased))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub total: usize,
    pub biased: usize,
    pub unbiased: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub counts: PartitionCounts,
    pub fingerprint: String,
    pub source_files: Vec<PathBuf>,
    pub biased_file: PathBuf,
    pub unbiased_file: PathBuf,
}

/// Writes `biased.jsonl`, `unbiased.jsonl` and `partition.json` into `dir`.
pub fn write_partition(
    dir: &Path,
    items: &[QaItem],
    partition: &BiasPartition,
    source_files: &[PathBuf],
) -> Result<PartitionManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (biased, unbiased) = partition.split(items);
    let manifest = PartitionManifest {
        counts: PartitionCounts {
            total: biased.len() + unbiased.len(),
            biased: biased.len(),
            unbiased: unbiased.len(),
        },
        fingerprint: partition.fingerprint.clone(),
        source_files: source_files.to_vec(),
        biased_file: PathBuf::from("biased.jsonl"),
        unbiased_file: PathBuf::from("unbiased.jsonl"),
    };
    write_qa(&dir.join(&manifest.biased_file), &biased)?;
    write_qa(&dir.join(&manifest.unbiased_file), &unbiased)?;
    let path = dir.join("partition.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::embedding::EmbeddingSet;
    use crate::eval::evaluate;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_world(seed: u64, n_items: usize) -> (QaModel, Vec<QaItem>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 12;
        let vocab = Vocabulary::from_counts((0..v).map(|i| (format!("w{i}"), 1)), 1).unwrap();
        let vectors = Array2::from_shape_fn((v, 4), |_| rng.random_range(-1.0..1.0));
        let model = QaModel::untrained(EmbeddingSet::new(vocab, vectors).unwrap());
        let word = |rng: &mut ChaCha8Rng| format!("w{} w{}", rng.random_range(0..v + 2), rng.random_range(0..v + 2));
        let items = (0..n_items)
            .map(|i| QaItem {
                qid: format!("q{i:03}"),
                movie_id: "m".into(),
                question: word(&mut rng),
                answers: std::array::from_fn(|_| word(&mut rng)),
                correct_index: Some(rng.random_range(0..5)),
                split: "val".into(),
            })
            .collect();
        (model, items)
    }

    #[test]
    fn partition_is_exact() {
        let (model, items) = random_world(3, 300);
        let p = partition_bias(&items, &model).unwrap();
        assert_eq!(p.biased.len() + p.unbiased.len(), items.len());
        let (b, u) = p.split(&items);
        assert!(!b.is_empty() && !u.is_empty());
        assert_eq!(evaluate(&b, &model).unwrap().accuracy, 1.0);
        assert_eq!(evaluate(&u, &model).unwrap().accuracy, 0.0);
    }

    #[test]
    fn rejects_trained_model() {
        let (model, items) = random_world(1, 5);
        let mut w = Array2::<f64>::eye(4);
        w[[0, 3]] = 1e-9;
        let trained = model.with_reweight(w).unwrap();
        assert!(matches!(partition_bias(&items, &trained), Err(Error::NotUntrained { .. })));
        let mut w = Array2::<f64>::eye(4);
        w[[2, 2]] += 1e-13;
        assert!(partition_bias(&items, &model.with_reweight(w).unwrap()).is_ok());
    }

    #[test]
    fn rejects_unlabeled_and_duplicates() {
        let (model, mut items) = random_world(1, 5);
        items[2].correct_index = None;
        assert!(matches!(partition_bias(&items, &model), Err(Error::MissingLabel { .. })));
        items[2].correct_index = Some(1);
        items[4].qid = items[0].qid.clone();
        assert!(matches!(partition_bias(&items, &model), Err(Error::InvalidItem { line: 5, .. })));
    }

    #[test]
    fn fingerprint_tracks_model() {
        let (a, _) = random_world(1, 0);
        let (b, _) = random_world(2, 0);
        assert_eq!(model_fingerprint(&a), model_fingerprint(&a.clone()));
        assert_ne!(model_fingerprint(&a), model_fingerprint(&b));
        assert_ne!(
            model_fingerprint(&a),
            model_fingerprint(&a.clone().with_oov_policy(OovPolicy::ZeroFill))
        );
        assert_eq!(model_fingerprint(&a).len(), 64);
    }

    #[test]
    fn writes_files() {
        let (model, items) = random_world(4, 40);
        let p = partition_bias(&items, &model).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_partition(dir.path(), &items, &p, &[PathBuf::from("qa.jsonl")]).unwrap();
        assert_eq!(m.counts.total, 40);
        let b = crate::qamodel::load_qa(&dir.path().join("biased.jsonl")).unwrap();
        assert_eq!(b.iter().map(|i| i.qid.clone()).collect::<Vec<_>>(), p.biased);
        let raw = fs::read_to_string(dir.path().join("partition.json")).unwrap();
        let back: PartitionManifest = serde_json::from_str(&raw).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn invariant_to_order_and_scale(seed in 0u64..1000, c in 0.01f64..100.0, rot in 0usize..50) {
            let (model, mut items) = random_world(seed, 50);
            let p = partition_bias(&items, &model).unwrap();
            items.rotate_left(rot);
            let scaled = QaModel::untrained(model.embeddings().scaled(c));
            let q = partition_bias(&items, &scaled).unwrap();
            prop_assert_eq!(p.biased, q.biased);
            prop_assert_eq!(p.unbiased, q.unbiased);
        }
    }
}
