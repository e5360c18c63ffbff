//! Synthetic on-disk corpora laid out exactly as the adapters expect, with
//! the label distribution of the published datasets. Texts are random
//! pseudo-words plus label-correlated cue words, so models can learn them.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde_json::json;

use super::adapters::{write_canonical, Adapter, DatasetSpec};
use super::record::{Label, LabelScheme, Record};
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedTree};

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "su", "ta", "ri", "po", "ve", "du", "ga", "zo", "be", "fi", "hu", "ja",
];

/// Label kinds as they appear in raw files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawKind {
    NonRumour,
    True,
    False,
    Unverified,
}

impl RawKind {
    fn cue_pool(self) -> usize {
        match self {
            RawKind::NonRumour => 0,
            RawKind::True => 1,
            RawKind::False => 2,
            RawKind::Unverified => 3,
        }
    }

    fn twitter_name(self) -> &'static str {
        match self {
            RawKind::NonRumour => "non-rumor",
            RawKind::True => "true",
            RawKind::False => "false",
            RawKind::Unverified => "unverified",
        }
    }
}

/// Generator for label-correlated pseudo-text.
#[derive(Debug, Clone, Copy)]
pub struct TextModel {
    /// Probability that a cue word comes from the item's own pool.
    pub cue_fidelity: f64,
    pub cues_per_text: usize,
    pub filler_words: (usize, usize),
}

impl Default for TextModel {
    fn default() -> Self {
        Self {
            cue_fidelity: 0.85,
            cues_per_text: 2,
            filler_words: (6, 12),
        }
    }
}

fn pseudo_word(index: usize) -> String {
    let a = SYLLABLES[index % 16];
    let b = SYLLABLES[(index / 16) % 16];
    let c = SYLLABLES[(index / 256) % 16];
    format!("{a}{b}{c}")
}

fn cue_word(pool: usize, k: usize) -> String {
    // Disjoint from filler indices, which stay below 1024.
    pseudo_word(1024 + pool * 16 + k)
}

impl TextModel {
    pub fn text(&self, kind: RawKind, rng: &mut Rng) -> String {
        let n = rng.gen_range(self.filler_words.0..=self.filler_words.1);
        let mut words: Vec<String> = (0..n).map(|_| pseudo_word(rng.gen_range(0..300))).collect();
        for _ in 0..self.cues_per_text {
            let pool = if rng.gen_bool(self.cue_fidelity) {
                kind.cue_pool()
            } else {
                rng.gen_range(0..4)
            };
            let at = rng.gen_range(0..=words.len());
            words.insert(at, cue_word(pool, rng.gen_range(0..12)));
        }
        words.join(" ")
    }
}

/// Counts of each raw label kind for one synthetic dataset.
#[derive(Debug, Clone, Copy)]
pub struct RawCounts {
    pub non_rumour: usize,
    pub true_: usize,
    pub false_: usize,
    pub unverified: usize,
}

impl RawCounts {
    fn kinds(&self) -> Vec<RawKind> {
        let mut out = Vec::new();
        out.extend(std::iter::repeat_n(RawKind::NonRumour, self.non_rumour));
        out.extend(std::iter::repeat_n(RawKind::True, self.true_));
        out.extend(std::iter::repeat_n(RawKind::False, self.false_));
        out.extend(std::iter::repeat_n(RawKind::Unverified, self.unverified));
        out
    }
}

pub const PHEME1_EVENTS: [&str; 5] = ["charliehebdo", "ferguson", "germanwings-crash", "ottawashooting", "sydneysiege"];
pub const PHEME2_EVENTS: [&str; 9] = [
    "charliehebdo",
    "ebola-essien",
    "ferguson",
    "germanwings-crash",
    "gurlitt",
    "ottawashooting",
    "prince-toronto",
    "putinmissing",
    "sydneysiege",
];

/// Writes a PHEME-style tree. With `annotate`, rumour threads carry a
/// veracity annotation; otherwise the rumour kinds only pick cue words.
pub fn write_pheme_tree(root: &Path, events: &[&str], counts: RawCounts, annotate: bool, seed: SeedTree, text: &TextModel) -> Result<()> {
    let mut rng = seed.child("text").rng();
    for (i, kind) in counts.kinds().into_iter().enumerate() {
        let event = events[i % events.len()];
        let folder = if kind == RawKind::NonRumour { "non-rumours" } else { "rumours" };
        let id = format!("{}", 500_000_000_000_000_000u64 + i as u64);
        let thread = root.join(format!("{event}-all-rnr-threads")).join(folder).join(&id);
        let sources = thread.join("source-tweets");
        fs::create_dir_all(&sources).map_err(|e| Error::io(&sources, e))?;
        let tweet = json!({ "id_str": id, "text": text.text(kind, &mut rng) });
        let p = sources.join(format!("{id}.json"));
        fs::write(&p, tweet.to_string()).map_err(|e| Error::io(&p, e))?;
        if annotate && kind != RawKind::NonRumour {
            let ann = match kind {
                RawKind::True => json!({ "is_rumour": "rumour", "misinformation": "0", "true": "1" }),
                RawKind::False => json!({ "is_rumour": "rumour", "misinformation": "1", "true": "0" }),
                _ => json!({ "is_rumour": "rumour", "misinformation": "0", "true": "0" }),
            };
            let p = thread.join("annotation.json");
            fs::write(&p, ann.to_string()).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

/// Writes `label.txt` and `source_tweets.txt` into `dir`.
pub fn write_twitter_dir(dir: &Path, counts: RawCounts, seed: SeedTree, text: &TextModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = seed.child("text").rng();
    let mut labels = String::new();
    let mut texts = String::new();
    for (i, kind) in counts.kinds().into_iter().enumerate() {
        let id = 600_000_000_000_000_000u64 + i as u64;
        labels.push_str(&format!("{}:{id}\n", kind.twitter_name()));
        texts.push_str(&format!("{id}\t{}\n", text.text(kind, &mut rng)));
    }
    let lp = dir.join("label.txt");
    fs::write(&lp, labels).map_err(|e| Error::io(&lp, e))?;
    let tp = dir.join("source_tweets.txt");
    fs::write(&tp, texts).map_err(|e| Error::io(&tp, e))
}

/// Writes a CSV with `id,title,label` columns (`real`/`fake`).
pub fn write_covid_csv(path: &Path, true_: usize, false_: usize, seed: SeedTree, text: &TextModel) -> Result<()> {
    let mut rng = seed.child("text").rng();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(e.to_string()))?;
    let fail = |e: csv::Error| Error::Dataset(e.to_string());
    w.write_record(["id", "title", "label"]).map_err(fail)?;
    for i in 0..true_ + false_ {
        let (kind, label) = if i < true_ { (RawKind::True, "real") } else { (RawKind::False, "fake") };
        w.write_record([format!("n{i}"), text.text(kind, &mut rng), label.to_string()])
            .map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Dataset specs for a corpus written by [`write_reference_corpus`].
#[derive(Debug, Clone)]
pub struct ReferenceCorpus {
    pub root: PathBuf,
    pub covid: DatasetSpec,
    pub pheme1: DatasetSpec,
    pub pheme2_rnr: DatasetSpec,
    pub pheme2_tf: DatasetSpec,
    pub twitter15_rnr: DatasetSpec,
    pub twitter15_tf: DatasetSpec,
    pub twitter16_rnr: DatasetSpec,
    pub twitter16_tf: DatasetSpec,
}

pub const PHEME1_COUNTS: RawCounts = RawCounts {
    non_rumour: 3822,
    true_: 0,
    false_: 0,
    unverified: 1969,
};
pub const PHEME2_COUNTS: RawCounts = RawCounts {
    non_rumour: 4023,
    true_: 1067,
    false_: 638,
    unverified: 697,
};
pub const TWITTER15_COUNTS: RawCounts = RawCounts {
    non_rumour: 372,
    true_: 374,
    false_: 370,
    unverified: 374,
};
pub const TWITTER16_COUNTS: RawCounts = RawCounts {
    non_rumour: 205,
    true_: 205,
    false_: 205,
    unverified: 203,
};
pub const COVID_COUNTS: (usize, usize) = (2061, 1058);

impl ReferenceCorpus {
    /// Specs pointing into `root`, whether or not the files exist yet.
    pub fn at(root: &Path) -> Self {
        let spec = |name: &str, sub: &str, adapter: Adapter, scheme| DatasetSpec::new(name, root.join(sub), adapter, scheme);
        let rnr = LabelScheme::RumourNonRumour;
        let tf = LabelScheme::TrueFalse;
        Self {
            root: root.to_path_buf(),
            covid: spec(
                "covid",
                "covid/news.csv",
                Adapter::CovidCsv {
                    text_column: "title".into(),
                    label_column: "label".into(),
                },
                tf,
            ),
            pheme1: spec("pheme1", "pheme1", Adapter::PhemeDir, rnr),
            pheme2_rnr: spec("pheme2", "pheme2", Adapter::PhemeDir, rnr),
            pheme2_tf: spec("pheme2", "pheme2", Adapter::PhemeDir, tf),
            twitter15_rnr: spec("twitter15", "twitter15", Adapter::TwitterLabelFile, rnr),
            twitter15_tf: spec("twitter15", "twitter15", Adapter::TwitterLabelFile, tf),
            twitter16_rnr: spec("twitter16", "twitter16", Adapter::TwitterLabelFile, rnr),
            twitter16_tf: spec("twitter16", "twitter16", Adapter::TwitterLabelFile, tf),
        }
    }

    pub fn all(&self) -> [&DatasetSpec; 8] {
        [
            &self.covid,
            &self.pheme1,
            &self.pheme2_rnr,
            &self.pheme2_tf,
            &self.twitter15_rnr,
            &self.twitter15_tf,
            &self.twitter16_rnr,
            &self.twitter16_tf,
        ]
    }
}

/// Writes all five synthetic source datasets under `root`.
pub fn write_reference_corpus(root: &Path, seed: u64) -> Result<ReferenceCorpus> {
    let tree = SeedTree::new(seed).child("fixtures");
    let text = TextModel::default();
    let corpus = ReferenceCorpus::at(root);
    let covid_dir = root.join("covid");
    fs::create_dir_all(&covid_dir).map_err(|e| Error::io(&covid_dir, e))?;
    write_covid_csv(&corpus.covid.path, COVID_COUNTS.0, COVID_COUNTS.1, tree.child("covid"), &text)?;
    write_pheme_tree(&corpus.pheme1.path, &PHEME1_EVENTS, PHEME1_COUNTS, false, tree.child("pheme1"), &text)?;
    write_pheme_tree(&corpus.pheme2_rnr.path, &PHEME2_EVENTS, PHEME2_COUNTS, true, tree.child("pheme2"), &text)?;
    write_twitter_dir(&corpus.twitter15_rnr.path, TWITTER15_COUNTS, tree.child("twitter15"), &text)?;
    write_twitter_dir(&corpus.twitter16_rnr.path, TWITTER16_COUNTS, tree.child("twitter16"), &text)?;
    Ok(corpus)
}

/// Balanced T/F records whose label is fully determined by a cue word.
pub fn separable_records(n: usize, seed: u64) -> Vec<Record> {
    let model = TextModel {
        cue_fidelity: 1.0,
        cues_per_text: 2,
        filler_words: (3, 6),
    };
    let mut rng = SeedTree::new(seed).child("separable").rng();
    (0..n)
        .map(|i| {
            let (kind, label) = if i % 2 == 0 { (RawKind::True, Label::True) } else { (RawKind::False, Label::False) };
            Record {
                id: format!("s{i}"),
                text: model.text(kind, &mut rng),
                label,
                source: "separable".into(),
                event: None,
            }
        })
        .collect()
}

/// Writes [`separable_records`] as canonical JSONL.
pub fn write_toy_jsonl(path: &Path, n: usize, seed: u64) -> Result<()> {
    write_canonical(path, &separable_records(n, seed))
}
