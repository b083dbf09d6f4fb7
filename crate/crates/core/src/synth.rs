//! A synthetic movie world with planted co-occurrence bias.
//!
//! Every movie owns `entities_per_movie` unique entity tokens arranged in a
//! ring; plot sentence `s` of movie `m` mentions the ring pair
//! `(e[m][j], e[m][j+1])` with `j = s mod k`, sometimes a third entity of the
//! same movie, and a few Zipf-distributed filler words.
//!
//! * Biased items ask about `e[m][j]`; the right answer is its ring partner,
//!   the four distractors come from other movies. Co-occurrence alone
//!   answers them.
//! * Unbiased items offer five entities of the question's own movie and mark
//!   one uniformly at random, so the plots carry no signal about the label.
//!
//! Entities are also sorted into decoy groups that cut across movies: entity
//! `(m, j)` belongs to group `(m - j) mod n_movies`, and biased distractors
//! are drawn from the question entity's group. General plots tell stories
//! about a single decoy group, so mixing many of them into the embedding
//! corpus ties question entities to their distractors.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_manifest, Document, SourceKind, SplitTag};
use crate::error::{Error, Result};
use crate::qamodel::{write_qa, QaItem, N_ANSWERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_movies: usize,
    pub entities_per_movie: usize,
    pub sentences_per_plot: usize,
    pub n_biased_qa: usize,
    pub n_unbiased_qa: usize,
    pub filler_vocab_size: usize,
    /// General plots about decoy groups; `None` means ten per movie.
    pub n_general_plots: Option<usize>,
    /// Share of movies (and their plots and questions) assigned to `val`.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_movies: 20,
            entities_per_movie: 5,
            sentences_per_plot: 40,
            n_biased_qa: 500,
            n_unbiased_qa: 500,
            filler_vocab_size: 200,
            n_general_plots: None,
            val_fraction: 0.3,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn general_plots(&self) -> usize {
        self.n_general_plots.unwrap_or(10 * self.n_movies)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_movies < 2 {
            return bad("n_movies must be at least 2 (distractors come from other movies)");
        }
        if self.entities_per_movie < 3 {
            return bad("entities_per_movie must be at least 3");
        }
        if (self.n_movies - 1) * self.entities_per_movie < N_ANSWERS - 1 {
            return bad("other movies must hold at least 4 entities for distractors");
        }
        for (name, v) in [
            ("sentences_per_plot", self.sentences_per_plot),
            ("n_biased_qa", self.n_biased_qa),
            ("n_unbiased_qa", self.n_unbiased_qa),
            ("filler_vocab_size", self.filler_vocab_size),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasLabel {
    pub qid: String,
    pub biased: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub documents: Vec<Document>,
    pub qa_items: Vec<QaItem>,
    pub labels: Vec<BiasLabel>,
}

pub fn entity_token(movie: usize, index: usize) -> String {
    format!("m{movie}e{index}")
}

pub fn movie_id(movie: usize) -> String {
    format!("synth{movie:03}")
}

fn filler_token(rank: usize) -> String {
    format!("w{rank}")
}

const QUESTION_TEMPLATES: [&str; 4] = [
    "who stays close to {}",
    "who does {} meet",
    "whom does {} trust",
    "who is seen with {}",
];

struct Generator {
    cfg: SynthConfig,
    rng: ChaCha8Rng,
    zipf: Zipf<f64>,
}

impl Generator {
    fn filler(&mut self) -> String {
        let rank = self.zipf.sample(&mut self.rng) as usize;
        filler_token(rank.clamp(1, self.cfg.filler_vocab_size))
    }

    fn sentence(&mut self, mut words: Vec<String>) -> String {
        for _ in 0..self.rng.random_range(2..=4) {
            let f = self.filler();
            words.push(f);
        }
        words.shuffle(&mut self.rng);
        words.join(" ")
    }

    fn movie_plot(&mut self, m: usize) -> String {
        let k = self.cfg.entities_per_movie;
        let sentences: Vec<String> = (0..self.cfg.sentences_per_plot)
            .map(|s| {
                let j = s % k;
                let mut words = vec![entity_token(m, j), entity_token(m, (j + 1) % k)];
                if self.rng.random_bool(0.5) {
                    let third = (j + self.rng.random_range(2..k)) % k;
                    words.push(entity_token(m, third));
                }
                self.sentence(words)
            })
            .collect();
        sentences.join(". ") + "."
    }

    /// `(movie, index)` members of decoy group `g`.
    fn group(&self, g: usize) -> Vec<(usize, usize)> {
        let n = self.cfg.n_movies;
        (0..self.cfg.entities_per_movie).map(|j| ((g + j) % n, j)).collect()
    }

    fn general_plot(&mut self, g: usize) -> String {
        let members = self.group(g);
        let sentences: Vec<String> = (0..self.cfg.sentences_per_plot)
            .map(|_| {
                let n = self.rng.random_range(2..=3.min(members.len()));
                let words = members
                    .choose_multiple(&mut self.rng, n)
                    .map(|&(m, j)| entity_token(m, j))
                    .collect();
                self.sentence(words)
            })
            .collect();
        sentences.join(". ") + "."
    }

    fn answer(&mut self, movie: usize, index: usize) -> String {
        format!("{} {}", entity_token(movie, index), self.filler())
    }

    fn question(&mut self, movie: usize, index: usize) -> String {
        let t = QUESTION_TEMPLATES.choose(&mut self.rng).expect("nonempty");
        t.replace("{}", &entity_token(movie, index))
    }

    fn biased_item(&mut self, qid: String, split: &str) -> QaItem {
        let k = self.cfg.entities_per_movie;
        let n = self.cfg.n_movies;
        let m = self.rng.random_range(0..n);
        // only ring pairs that were actually planted
        let j = self.rng.random_range(0..k.min(self.cfg.sentences_per_plot));

        let mut distractors: Vec<(usize, usize)> = self
            .group((m + n - j % n) % n)
            .into_iter()
            .filter(|&(dm, _)| dm != m)
            .collect();
        distractors.shuffle(&mut self.rng);
        distractors.truncate(N_ANSWERS - 1);
        while distractors.len() < N_ANSWERS - 1 {
            let cand = (self.rng.random_range(0..n), self.rng.random_range(0..k));
            if cand.0 != m && !distractors.contains(&cand) {
                distractors.push(cand);
            }
        }
        let correct = self.rng.random_range(0..N_ANSWERS);
        distractors.insert(correct, (m, (j + 1) % k));
        let question = self.question(m, j);
        let answers = std::array::from_fn(|i| self.answer(distractors[i].0, distractors[i].1));
        QaItem {
            qid,
            movie_id: movie_id(m),
            question,
            answers,
            correct_index: Some(correct),
            split: split.to_string(),
        }
    }

    fn unbiased_item(&mut self, qid: String, split: &str) -> QaItem {
        let k = self.cfg.entities_per_movie;
        let m = self.rng.random_range(0..self.cfg.n_movies);
        let j = self.rng.random_range(0..k);
        let mut others: Vec<usize> = (0..k).filter(|&x| x != j).collect();
        others.shuffle(&mut self.rng);
        let mut picks: Vec<usize> = others.iter().copied().cycle().take(N_ANSWERS).collect();
        picks.shuffle(&mut self.rng);
        let question = self.question(m, j);
        let answers = std::array::from_fn(|i| self.answer(m, picks[i]));
        QaItem {
            qid,
            movie_id: movie_id(m),
            question,
            answers,
            correct_index: Some(self.rng.random_range(0..N_ANSWERS)),
            split: split.to_string(),
        }
    }
}

/// Builds the world. Bit-deterministic per config.
pub fn generate_synth(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let n = cfg.n_movies;
    let mut g = Generator {
        cfg: cfg.clone(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        zipf: Zipf::new(cfg.filler_vocab_size as f64, 1.0)
            .map_err(|e| Error::InvalidConfig(format!("filler distribution: {e}")))?,
    };

    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut g.rng);
    let mut splits = vec![SplitTag::Train; n];
    for &m in &order[..n_val] {
        splits[m] = SplitTag::Val;
    }

    let mut documents = Vec::with_capacity(n + cfg.general_plots());
    for (m, &split) in splits.iter().enumerate() {
        let text = g.movie_plot(m);
        documents.push(Document::new(format!("plot{m:03}"), movie_id(m), split, SourceKind::Plot, text));
    }
    for i in 0..cfg.general_plots() {
        let group = i % n;
        let text = g.general_plot(group);
        documents.push(Document::new(
            format!("gen{i:04}"),
            format!("general{i:04}"),
            SplitTag::General,
            SourceKind::Plot,
            text,
        ));
    }

    let mut qa_items = Vec::with_capacity(cfg.n_biased_qa + cfg.n_unbiased_qa);
    let mut labels = Vec::with_capacity(qa_items.capacity());
    for i in 0..cfg.n_biased_qa {
        let mut it = g.biased_item(format!("b{i:05}"), "");
        it.split = split_of(&splits, &it).to_string();
        labels.push(BiasLabel { qid: it.qid.clone(), biased: true });
        qa_items.push(it);
    }
    for i in 0..cfg.n_unbiased_qa {
        let mut it = g.unbiased_item(format!("u{i:05}"), "");
        it.split = split_of(&splits, &it).to_string();
        labels.push(BiasLabel { qid: it.qid.clone(), biased: false });
        qa_items.push(it);
    }

    Ok(SynthWorld {
        config: cfg.clone(),
        documents,
        qa_items,
        labels,
    })
}

fn split_of(splits: &[SplitTag], item: &QaItem) -> &'static str {
    let m: usize = item.movie_id["synth".len()..].parse().expect("generated movie id");
    splits[m].as_str()
}

impl SynthWorld {
    pub fn items_with_split(&self, split: &str) -> Vec<QaItem> {
        self.qa_items.iter().filter(|it| it.split == split).cloned().collect()
    }

    /// Items by ground-truth label: `(biased, unbiased)`.
    pub fn by_label(&self) -> (Vec<QaItem>, Vec<QaItem>) {
        let (b, u): (Vec<_>, Vec<_>) = self
            .qa_items
            .iter()
            .zip(&self.labels)
            .partition(|(_, l)| l.biased);
        (b.into_iter().map(|(it, _)| it.clone()).collect(), u.into_iter().map(|(it, _)| it.clone()).collect())
    }

    /// Writes the corpus manifest, QA files and labels; returns the paths
    /// written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = vec![write_manifest(dir, &self.documents)?];
        let (biased, unbiased) = self.by_label();
        for (name, items) in [
            ("qa_all.jsonl", self.qa_items.clone()),
            ("qa_train.jsonl", self.items_with_split("train")),
            ("qa_val.jsonl", self.items_with_split("val")),
            ("qa_biased.jsonl", biased),
            ("qa_unbiased.jsonl", unbiased),
        ] {
            let path = dir.join(name);
            write_qa(&path, &items)?;
            written.push(path);
        }
        let mut labels = String::new();
        for l in &self.labels {
            labels += &serde_json::to_string(l).expect("label serializes");
            labels.push('\n');
        }
        let path = dir.join("bias_labels.jsonl");
        fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        let path = dir.join("synth_config.json");
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_manifest, tokenize};
    use std::collections::{BTreeSet, HashSet};

    fn small() -> SynthConfig {
        SynthConfig {
            n_movies: 6,
            n_biased_qa: 60,
            n_unbiased_qa: 40,
            ..SynthConfig::default()
        }
    }

    fn entity_of(text: &str) -> String {
        tokenize(text)
            .iter()
            .find(|t| t.starts_with('m') && t.contains('e'))
            .expect("entity mention")
            .to_string()
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synth(&small()).unwrap(), generate_synth(&small()).unwrap());
        let other = generate_synth(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(generate_synth(&small()).unwrap(), other);
    }

    #[test]
    fn shape() {
        let w = generate_synth(&small()).unwrap();
        assert_eq!(w.documents.len(), 6 + 60);
        assert_eq!(w.qa_items.len(), 100);
        assert_eq!(w.labels.iter().filter(|l| l.biased).count(), 60);
        let splits: BTreeSet<_> = w.documents.iter().map(|d| d.split_tag).collect();
        assert_eq!(splits, BTreeSet::from([SplitTag::Train, SplitTag::Val, SplitTag::General]));
        for it in &w.qa_items {
            let doc = w.documents.iter().find(|d| d.movie_id == it.movie_id).unwrap();
            assert_eq!(doc.split_tag.as_str(), it.split);
        }
    }

    #[test]
    fn movie_vocabularies_are_disjoint() {
        let w = generate_synth(&small()).unwrap();
        let mut seen: HashSet<String> = HashSet::new();
        for d in w.documents.iter().filter(|d| d.split_tag != SplitTag::General) {
            let ents: HashSet<String> = tokenize(&d.text)
                .iter()
                .filter(|t| !t.starts_with('w'))
                .map(str::to_string)
                .collect();
            assert_eq!(ents.len(), 5);
            assert!(seen.is_disjoint(&ents));
            seen.extend(ents);
        }
    }

    #[test]
    fn biased_answers_share_a_sentence_distractors_do_not() {
        let w = generate_synth(&small()).unwrap();
        let (biased, _) = w.by_label();
        for it in &biased {
            let q = entity_of(&it.question);
            let plot = w
                .documents
                .iter()
                .find(|d| d.movie_id == it.movie_id && d.split_tag != SplitTag::General)
                .unwrap();
            let cooccurs = |e: &str| {
                plot.text.split('.').any(|s| {
                    let toks = tokenize(s);
                    toks.iter().any(|t| t == q) && toks.iter().any(|t| t == e)
                })
            };
            let c = it.correct_index.unwrap();
            for (i, a) in it.answers.iter().enumerate() {
                assert_eq!(cooccurs(&entity_of(a)), i == c, "{}: answer {i}", it.qid);
            }
        }
    }

    #[test]
    fn unbiased_answers_stay_in_movie() {
        let w = generate_synth(&small()).unwrap();
        let (_, unbiased) = w.by_label();
        for it in &unbiased {
            let prefix = format!("m{}e", it.movie_id["synth".len()..].parse::<usize>().unwrap());
            let q = entity_of(&it.question);
            for a in &it.answers {
                let e = entity_of(a);
                assert!(e.starts_with(&prefix) && e != q);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { n_movies: 1, ..small() },
            SynthConfig { entities_per_movie: 2, ..small() },
            SynthConfig { sentences_per_plot: 0, ..small() },
            SynthConfig { n_unbiased_qa: 0, ..small() },
            SynthConfig { filler_vocab_size: 0, ..small() },
            SynthConfig { val_fraction: 1.0, ..small() },
            SynthConfig { n_movies: 2, entities_per_movie: 3, ..small() },
        ] {
            assert!(matches!(generate_synth(&cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn files_round_trip() {
        let w = generate_synth(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.write(dir.path()).unwrap();
        let docs = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(docs, w.documents);
        let all = crate::qamodel::load_qa(&dir.path().join("qa_all.jsonl")).unwrap();
        assert_eq!(all, w.qa_items);
    }
}
