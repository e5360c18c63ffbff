//! Larger end-to-end routines shared by the integration tests and the
//! acceptance target.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use misinfo::benchmark::{fit_encoder, partition, vectors_for, VocabConfig};
use misinfo::data::fixtures::{separable_records, write_pheme_tree, ReferenceCorpus, TextModel, PHEME2_COUNTS, PHEME2_EVENTS};
use misinfo::data::{
    combine, combined_split, load_dataset, split, test_size, val_size, Adapter, Dataset, DatasetSpec, Label, LabelScheme,
    Split,
};
use misinfo::encoder::Preset;
use misinfo::eval::{evaluate, Averaging};
use misinfo::heads::HeadVariant;
use misinfo::train::{train_head, FinetuneConfig, TrainConfig};
use misinfo::SeedTree;

/// One expected count and what was found.
#[derive(Debug)]
pub struct Count {
    pub what: String,
    pub got: usize,
    pub want: usize,
}

fn load(spec: &DatasetSpec) -> Dataset {
    load_dataset(spec).unwrap_or_else(|e| panic!("{}: {e}", spec.path.display())).0
}

fn count(d: &Dataset, label: Label) -> usize {
    d.records.iter().filter(|r| r.label == label).count()
}

/// Every label count of the published dataset table, read through the
/// adapters, plus both combined datasets.
pub fn table1(corpus: &ReferenceCorpus) -> Vec<Count> {
    use Label::*;
    let mut out = Vec::new();
    let mut push = |d: &Dataset, label: Label, want: usize| {
        out.push(Count {
            what: format!("{} {} {}", d.name, d.scheme, label.as_str()),
            got: count(d, label),
            want,
        })
    };
    let covid = load(&corpus.covid);
    push(&covid, True, 2061);
    push(&covid, False, 1058);
    let pheme1 = load(&corpus.pheme1);
    push(&pheme1, NonRumour, 3822);
    push(&pheme1, Rumour, 1969);
    let rnr = [load(&corpus.pheme2_rnr), load(&corpus.twitter15_rnr), load(&corpus.twitter16_rnr)];
    for (d, (nr, r)) in rnr.iter().zip([(4023, 2402), (372, 1118), (205, 613)]) {
        push(d, NonRumour, nr);
        push(d, Rumour, r);
    }
    let tf = [load(&corpus.pheme2_tf), load(&corpus.twitter15_tf), load(&corpus.twitter16_tf)];
    for (d, (t, f)) in tf.iter().zip([(1067, 638), (374, 370), (205, 205)]) {
        push(d, True, t);
        push(d, False, f);
    }
    let (combined_rnr, _) = combine(&rnr, LabelScheme::RumourNonRumour, "combined").unwrap();
    push(&combined_rnr, NonRumour, 4600);
    push(&combined_rnr, Rumour, 4133);
    let (combined_tf, _) = combine(&tf, LabelScheme::TrueFalse, "combined").unwrap();
    push(&combined_tf, True, 1646);
    push(&combined_tf, False, 1213);
    // unverified items are dropped from T/F, not relabelled
    for (d, unverified) in [(&corpus.pheme2_tf, 697), (&corpus.twitter15_tf, 374), (&corpus.twitter16_tf, 203)] {
        out.push(Count {
            what: format!("{} T/F dropped unverified", d.name),
            got: load_dataset(d).unwrap().1.dropped_unverified,
            want: unverified,
        });
    }
    out
}

/// Problems with one split of `d`; empty when the protocol holds.
pub fn split_problems(d: &Dataset, seed: u64) -> Vec<String> {
    let mut problems = Vec::new();
    let n = d.len();
    let a = split(&d.records, seed).unwrap();
    let t = test_size(n);
    let v = val_size(n - t);
    for (s, want) in [(Split::Test, t), (Split::Val, v), (Split::Train, n - t - v)] {
        if a.size(s) != want {
            problems.push(format!("{}: {s:?} has {} not {want}", d.name, a.size(s)));
        }
    }
    let ids: BTreeSet<&str> = d.records.iter().map(|r| r.id.as_str()).collect();
    let assigned: BTreeSet<&str> = a.assignment.keys().map(String::as_str).collect();
    if ids != assigned {
        problems.push(format!("{}: assignment does not cover the dataset exactly", d.name));
    }
    let class_total = [0, 1].map(|c| d.records.iter().filter(|r| r.label.class() == c).count());
    for s in [Split::Train, Split::Val, Split::Test] {
        let picked = a.select(&d.records, s);
        for (c, &total) in class_total.iter().enumerate() {
            let got = picked.iter().filter(|r| r.label.class() == c).count() as f64;
            let share = picked.len() as f64 * total as f64 / n as f64;
            if (got - share).abs() > 1.0 {
                problems.push(format!("{}: {s:?} class {c} has {got}, proportional share {share:.2}", d.name));
            }
        }
    }
    if split(&d.records, seed).unwrap() != a {
        problems.push(format!("{}: same seed gave a different split", d.name));
    }
    problems
}

/// Test-set size and per-source breakdown of a combined split.
pub fn combined_test_sizes(datasets: &[Dataset], scheme: LabelScheme, seed: u64) -> (usize, BTreeMap<String, usize>) {
    let (_, a) = combined_split(datasets, scheme, "combined", seed).unwrap();
    let by_origin = a
        .test_by_origin()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.len()))
        .collect();
    (a.size(Split::Test), by_origin)
}

pub struct Overfit {
    pub finetune_train_accuracy: f64,
    pub head_train_accuracy: f64,
    pub head_epochs: usize,
}

/// Tiny encoder + 4L-MLP on 64 separable records: 10 finetune epochs, at
/// most 200 head epochs, accuracy measured on the training records.
pub fn overfit(seed: u64) -> Overfit {
    let records = separable_records(64, seed);
    let vocab = VocabConfig {
        target_size: 1024,
        min_freq: 1,
        lowercase: true,
    };
    let mut ft = FinetuneConfig::new(seed);
    ft.epochs = 10;
    ft.max_len = 32;
    let fitted = fit_encoder(Preset::Tiny, &records, &[], &vocab, &ft).unwrap();
    let best = fitted.outcome.best_epoch.unwrap();
    let data = vectors_for(&fitted, &records, ft.max_len, 64).unwrap();
    let mut tc = TrainConfig::new(seed);
    tc.max_epochs = 200;
    tc.batch_size = 64;
    let empty = misinfo::train::LabelledVectors::from_rows(&[], vec![], data.width()).unwrap();
    let (head, log) = train_head(&data, &empty, &HeadVariant::Mlp4.config(data.width()), &tc).unwrap();
    let preds = head.predict(&data.vectors, 64).unwrap();
    Overfit {
        finetune_train_accuracy: fitted.outcome.log[best].train_accuracy,
        head_train_accuracy: evaluate(&preds, &data.labels, Averaging::Macro).unwrap().accuracy,
        head_epochs: log.epochs.len(),
    }
}

/// Cue-word text that is only partly informative: one cue per item, and the
/// cue matches the label half the time (otherwise drawn from any pool).
pub fn hard_text() -> TextModel {
    TextModel {
        cue_fidelity: 0.5,
        cues_per_text: 1,
        filler_words: (6, 12),
    }
}

/// Writes a PHEME-layout tree with the published PHEME2 label counts and
/// harder text, returning its T/F spec.
pub fn write_pheme2_proxy(root: &Path, seed: u64) -> DatasetSpec {
    let dir = root.join("pheme2");
    write_pheme_tree(&dir, &PHEME2_EVENTS, PHEME2_COUNTS, true, SeedTree::new(seed).child("proxy"), &hard_text()).unwrap();
    DatasetSpec::new("pheme2", dir, Adapter::PhemeDir, LabelScheme::TrueFalse)
}

pub struct EndToEnd {
    pub test_accuracy: f64,
    pub majority_baseline: f64,
    pub test_size: usize,
}

/// The published two-stage recipe with the tiny preset trained from scratch:
/// finetune (lr 5e-5, batch 8, 10 epochs), mean-pool, then 4L-MLP
/// (lr 2e-4, batch 512, up to 1000 epochs, patience 50).
pub fn pheme2_end_to_end(spec: &DatasetSpec, seed: u64) -> EndToEnd {
    let (dataset, _) = load_dataset(spec).unwrap();
    let assignment = split(&dataset.records, seed).unwrap();
    let [train, val, test] = partition(&dataset, &assignment);
    let ft = FinetuneConfig::new(seed);
    let fitted = fit_encoder(Preset::Tiny, &train, &val, &VocabConfig::default(), &ft).unwrap();
    let batch = ft.eval_batch_size;
    let tr = vectors_for(&fitted, &train, ft.max_len, batch).unwrap();
    let va = vectors_for(&fitted, &val, ft.max_len, batch).unwrap();
    let te = vectors_for(&fitted, &test, ft.max_len, batch).unwrap();
    let (head, _) = train_head(&tr, &va, &HeadVariant::Mlp4.config(tr.width()), &TrainConfig::new(seed)).unwrap();
    let preds = head.predict(&te.vectors, 1024).unwrap();
    EndToEnd {
        test_accuracy: evaluate(&preds, &te.labels, Averaging::Macro).unwrap().accuracy,
        majority_baseline: dataset.majority_baseline(),
        test_size: te.len(),
    }
}
