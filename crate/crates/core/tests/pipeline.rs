//! End-to-end properties of the synthetic world.

use wikiword::bias::partition_bias;
use wikiword::corpus::{select_corpus, CorpusSelector, SplitTag};
use wikiword::embedding::{train_sgns, SgnsConfig};
use wikiword::eval::{run_ablation, sweep_extra_plots, AblationCell, AblationSpec};
use wikiword::finetune::FinetuneConfig;
use wikiword::qamodel::QaModel;
use wikiword::synth::{generate_synth, SynthConfig};

fn sgns() -> SgnsConfig {
    SgnsConfig {
        dim: 50,
        epochs: 30,
        ..SgnsConfig::default()
    }
}

#[test]
fn ground_truth_labels_agree_with_partition() {
    let world = generate_synth(&SynthConfig::default()).unwrap();
    let corpus = select_corpus(&world.documents, &CorpusSelector::plots([SplitTag::Train, SplitTag::Val]), 1).unwrap();
    let model = QaModel::untrained(train_sgns(&corpus, &sgns()).unwrap());
    let partition = partition_bias(&world.qa_items, &model).unwrap();
    let agree = world
        .labels
        .iter()
        .filter(|l| partition.biased.binary_search(&l.qid).is_ok() == l.biased)
        .count();
    let rate = agree as f64 / world.labels.len() as f64;
    assert!(rate >= 0.8, "agreement {rate}");
}

#[test]
fn restricting_the_corpus_to_one_split_favours_that_split() {
    let world = generate_synth(&SynthConfig {
        n_unbiased_qa: 100,
        ..SynthConfig::default()
    })
    .unwrap();
    let cell = |splits: &[SplitTag]| AblationCell {
        selector: CorpusSelector::plots(splits.iter().copied()),
        fine_tune: false,
    };
    let spec = AblationSpec {
        cells: vec![
            cell(&[SplitTag::Val]),
            cell(&[SplitTag::Train]),
            cell(&[SplitTag::Train, SplitTag::Val]),
        ],
        sgns: sgns(),
        finetune: FinetuneConfig::default(),
        seed: 2,
    };
    let t = run_ablation(
        &spec,
        &world.documents,
        &world.items_with_split("train"),
        &world.items_with_split("val"),
    )
    .unwrap();
    println!("{}", t.render());
    let (val_only, train_only, both) = (&t.rows[0], &t.rows[1], &t.rows[2]);
    assert!(val_only.val.accuracy > val_only.train.accuracy + 0.2);
    assert!(train_only.train.accuracy > train_only.val.accuracy + 0.2);
    assert!(both.val.accuracy > train_only.val.accuracy);
    assert!(both.train.accuracy > val_only.train.accuracy);
}

#[test]
fn sweep_degrades_with_distractor_plots() {
    let world = generate_synth(&SynthConfig {
        n_unbiased_qa: 100,
        ..SynthConfig::default()
    })
    .unwrap();
    let base = CorpusSelector::plots([SplitTag::Train, SplitTag::Val]);
    let curve = sweep_extra_plots(
        &[0, 50, 200],
        &base,
        &SgnsConfig { epochs: 15, ..sgns() },
        &world.documents,
        &world.items_with_split("val"),
        &[1, 2],
    )
    .unwrap();
    println!("{}", curve.render());
    let first = curve.points.first().unwrap().mean_accuracy;
    let last = curve.points.last().unwrap().mean_accuracy;
    assert!(last <= first, "{first} -> {last}");
    assert_eq!(curve.points.last().unwrap().total_docs, 220);
}
