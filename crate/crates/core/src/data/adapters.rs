//! Readers that normalise each on-disk dataset layout into [`Record`]s.
//!
//! * `pheme-dir`: `<root>/<event>/{rumours,non-rumours}/<thread>/source-tweets/<thread>.json`
//!   (the first `*.json` in `source-tweets/` is read; its `text` or `full_text`
//!   field is the record text and `id_str`/`id` the record id, falling back to
//!   the thread folder name). Veracity comes from `<thread>/annotation.json`:
//!   `"true": 1` is true, `"misinformation": 1` is false, anything else is
//!   unverified. A `-all-rnr-threads` suffix is stripped from event names.
//!   Reply threads are ignored.
//! * `twitter-label-file`: a directory holding `label.txt` (`label:id` or
//!   `label<TAB>id` lines; labels `non-rumor`, `true`, `false`, `unverified`)
//!   and `source_tweets.txt` (`id<TAB>text`). A path to `label.txt` itself also
//!   works.
//! * `covid-csv`: header row; text and label columns chosen by name; an `id`
//!   column is used when present, otherwise the 1-based row number.
//! * `canonical-jsonl`: one [`Record`] object per line.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::record::{Dataset, DatasetManifest, Label, LabelScheme, Record};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Adapter {
    PhemeDir,
    TwitterLabelFile,
    CovidCsv { text_column: String, label_column: String },
    CanonicalJsonl,
}

impl Adapter {
    pub fn name(&self) -> &'static str {
        match self {
            Adapter::PhemeDir => "pheme-dir",
            Adapter::TwitterLabelFile => "twitter-label-file",
            Adapter::CovidCsv { .. } => "covid-csv",
            Adapter::CanonicalJsonl => "canonical-jsonl",
        }
    }
}

impl FromStr for Adapter {
    type Err = Error;

    /// `covid-csv` takes optional `:text_column:label_column`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        match parts.next().unwrap_or_default() {
            "pheme-dir" => Ok(Adapter::PhemeDir),
            "twitter-label-file" => Ok(Adapter::TwitterLabelFile),
            "canonical-jsonl" => Ok(Adapter::CanonicalJsonl),
            "covid-csv" => Ok(Adapter::CovidCsv {
                text_column: parts.next().unwrap_or("text").to_string(),
                label_column: parts.next().unwrap_or("label").to_string(),
            }),
            other => Err(Error::Config(format!("unknown adapter `{other}`"))),
        }
    }
}

/// Where a dataset lives and how to read it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    pub adapter: Adapter,
    pub scheme: LabelScheme,
}

impl DatasetSpec {
    pub fn new(name: impl Into<String>, path: impl Into<PathBuf>, adapter: Adapter, scheme: LabelScheme) -> Self {
        Self {
            name: name.into(),
            path: path.into(),
            adapter,
            scheme,
        }
    }
}

/// Label as found in a source file, before the scheme filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RawLabel {
    NonRumour,
    True,
    False,
    Unverified,
    /// A rumour with no veracity information.
    Rumour,
}

impl RawLabel {
    /// `Ok(None)` means the item does not belong to the scheme.
    fn resolve(self, scheme: LabelScheme) -> Option<Label> {
        match (scheme, self) {
            (LabelScheme::RumourNonRumour, RawLabel::NonRumour) => Some(Label::NonRumour),
            (LabelScheme::RumourNonRumour, _) => Some(Label::Rumour),
            (LabelScheme::TrueFalse, RawLabel::True) => Some(Label::True),
            (LabelScheme::TrueFalse, RawLabel::False) => Some(Label::False),
            (LabelScheme::TrueFalse, _) => None,
        }
    }
}

struct Collector {
    name: String,
    scheme: LabelScheme,
    records: Vec<Record>,
    seen: HashSet<String>,
    dropped_unverified: usize,
}

impl Collector {
    fn new(name: &str, scheme: LabelScheme) -> Self {
        Self {
            name: name.to_string(),
            scheme,
            records: Vec::new(),
            seen: HashSet::new(),
            dropped_unverified: 0,
        }
    }

    fn push(&mut self, raw: RawLabel, id: String, text: String, event: Option<String>, path: &Path, line: usize) -> Result<()> {
        if id.is_empty() {
            return Err(parse_err(path, line, "empty id"));
        }
        if !self.seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("duplicate id `{id}`")));
        }
        match raw.resolve(self.scheme) {
            Some(label) => self.records.push(Record {
                id,
                text,
                label,
                source: self.name.clone(),
                event,
            }),
            None if raw == RawLabel::Unverified || raw == RawLabel::Rumour => self.dropped_unverified += 1,
            None => {}
        }
        Ok(())
    }

    fn finish(self, provenance: String) -> (Dataset, DatasetManifest) {
        let dataset = Dataset {
            name: self.name,
            scheme: self.scheme,
            records: self.records,
        };
        let mut manifest = dataset.manifest(provenance);
        manifest.dropped_unverified = self.dropped_unverified;
        (dataset, manifest)
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Reads a dataset and applies the scheme's unverified filter.
pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, DatasetManifest)> {
    if !spec.path.exists() {
        return Err(Error::io(&spec.path, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset path does not exist")));
    }
    let mut c = Collector::new(&spec.name, spec.scheme);
    match &spec.adapter {
        Adapter::PhemeDir => read_pheme(&spec.path, &mut c)?,
        Adapter::TwitterLabelFile => read_twitter(&spec.path, &mut c)?,
        Adapter::CovidCsv {
            text_column,
            label_column,
        } => {
            if spec.scheme != LabelScheme::TrueFalse {
                return Err(Error::Config("covid-csv only supports the T/F scheme".into()));
            }
            read_covid(&spec.path, text_column, label_column, &mut c)?
        }
        Adapter::CanonicalJsonl => read_canonical(&spec.path, &mut c)?,
    }
    let provenance = format!("{} at {}", spec.adapter.name(), spec.path.display());
    Ok(c.finish(provenance))
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.is_dir() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

fn flag(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Number(n) => n.as_f64() == Some(1.0),
        serde_json::Value::String(s) => s.trim() == "1" || s.eq_ignore_ascii_case("true"),
        serde_json::Value::Bool(b) => *b,
        _ => false,
    }
}

fn read_pheme(root: &Path, c: &mut Collector) -> Result<()> {
    for event_dir in sorted_dirs(root)? {
        let event = file_name(&event_dir).trim_end_matches("-all-rnr-threads").to_string();
        for (folder, rumour) in [("rumours", true), ("non-rumours", false)] {
            let group = event_dir.join(folder);
            if !group.is_dir() {
                continue;
            }
            for thread in sorted_dirs(&group)? {
                let sources = thread.join("source-tweets");
                let mut files: Vec<PathBuf> = fs::read_dir(&sources)
                    .map_err(|e| Error::io(&sources, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                files.sort();
                let Some(tweet_path) = files.first() else {
                    return Err(parse_err(&sources, 0, "no source tweet json"));
                };
                let tweet = read_json(tweet_path)?;
                let text = tweet
                    .get("text")
                    .or_else(|| tweet.get("full_text"))
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| parse_err(tweet_path, 1, "missing `text` field"))?
                    .to_string();
                let id = match tweet.get("id_str").or_else(|| tweet.get("id")) {
                    Some(serde_json::Value::String(s)) => s.clone(),
                    Some(serde_json::Value::Number(n)) => n.to_string(),
                    _ => file_name(&thread),
                };
                let raw = if !rumour {
                    RawLabel::NonRumour
                } else {
                    let ann_path = thread.join("annotation.json");
                    if ann_path.is_file() {
                        let ann = read_json(&ann_path)?;
                        if ann.get("true").is_some_and(flag) {
                            RawLabel::True
                        } else if ann.get("misinformation").is_some_and(flag) {
                            RawLabel::False
                        } else {
                            RawLabel::Unverified
                        }
                    } else {
                        RawLabel::Rumour
                    }
                };
                c.push(raw, id, text, Some(event.clone()), tweet_path, 1)?;
            }
        }
    }
    Ok(())
}

fn twitter_label(s: &str) -> Option<RawLabel> {
    match s.trim().to_ascii_lowercase().as_str() {
        "non-rumor" | "non-rumour" | "nonrumor" | "nonrumour" => Some(RawLabel::NonRumour),
        "true" => Some(RawLabel::True),
        "false" => Some(RawLabel::False),
        "unverified" => Some(RawLabel::Unverified),
        _ => None,
    }
}

fn read_twitter(path: &Path, c: &mut Collector) -> Result<()> {
    let (dir, label_path) = if path.is_dir() {
        (path.to_path_buf(), path.join("label.txt"))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let text_path = dir.join("source_tweets.txt");
    let texts_raw = fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
    let mut texts: HashMap<&str, &str> = HashMap::new();
    for (i, line) in texts_raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(&text_path, i + 1, "expected `id<TAB>text`"))?;
        texts.insert(id.trim(), text);
    }
    let labels_raw = fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
    for (i, line) in labels_raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, id) = line
            .split_once('\t')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| parse_err(&label_path, line_no, "expected `label:id` or `label<TAB>id`"))?;
        let raw = twitter_label(label)
            .ok_or_else(|| parse_err(&label_path, line_no, format!("unknown label `{}`", label.trim())))?;
        let id = id.trim();
        let text = texts
            .get(id)
            .ok_or_else(|| parse_err(&label_path, line_no, format!("no text for id `{id}` in source_tweets.txt")))?;
        c.push(raw, id.to_string(), text.to_string(), None, &label_path, line_no)?;
    }
    Ok(())
}

fn covid_label(s: &str) -> Option<RawLabel> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "real" | "1" => Some(RawLabel::True),
        "false" | "fake" | "0" => Some(RawLabel::False),
        _ => None,
    }
}

fn read_covid(path: &Path, text_column: &str, label_column: &str, c: &mut Collector) -> Result<()> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, 1, e.to_string()))?;
    let headers = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_idx = find(text_column).ok_or_else(|| parse_err(path, 1, format!("no `{text_column}` column")))?;
    let label_idx = find(label_column).ok_or_else(|| parse_err(path, 1, format!("no `{label_column}` column")))?;
    let id_idx = find("id");
    for (i, row) in reader.records().enumerate() {
        let line_no = i + 2;
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(line_no);
            parse_err(path, line, e.to_string())
        })?;
        let line_no = row.position().map(|p| p.line() as usize).unwrap_or(line_no);
        let cell = |idx: usize| row.get(idx).ok_or_else(|| parse_err(path, line_no, "missing column"));
        let label = cell(label_idx)?;
        let raw = covid_label(label).ok_or_else(|| parse_err(path, line_no, format!("unknown label `{label}`")))?;
        let id = match id_idx {
            Some(k) => cell(k)?.trim().to_string(),
            None => (i + 1).to_string(),
        };
        c.push(raw, id, cell(text_idx)?.to_string(), None, path, line_no)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct CanonicalLine {
    id: String,
    text: String,
    label: String,
    source: String,
    #[serde(default)]
    event: Option<String>,
}

fn read_canonical(path: &Path, c: &mut Collector) -> Result<()> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: CanonicalLine = serde_json::from_str(line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let label = match row.label.as_str() {
            "unverified" => RawLabel::Unverified,
            other => {
                let l: Label = other.parse().map_err(|e: String| parse_err(path, line_no, e))?;
                if l.scheme() != c.scheme {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("label `{other}` is not part of the {} scheme", c.scheme),
                    ));
                }
                match l {
                    Label::NonRumour => RawLabel::NonRumour,
                    Label::Rumour => RawLabel::Rumour,
                    Label::True => RawLabel::True,
                    Label::False => RawLabel::False,
                }
            }
        };
        let before = c.records.len();
        c.push(label, row.id, row.text, row.event, path, line_no)?;
        if c.records.len() > before {
            c.records.last_mut().expect("pushed").source = row.source;
        }
    }
    Ok(())
}

/// Writes records as canonical JSONL.
pub fn write_canonical(path: &Path, records: &[Record]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
