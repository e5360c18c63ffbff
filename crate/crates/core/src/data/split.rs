use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::{Dataset, DatasetManifest, LabelScheme, Record};
use crate::error::{Error, Result};
use crate::rng::SeedTree;

pub const MIN_SPLIT_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `floor(N/10)`.
pub fn test_size(n: usize) -> usize {
    n / 10
}

/// `floor(0.25 · remaining)`.
pub fn val_size(remaining: usize) -> usize {
    remaining / 4
}

/// Placement of every record id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
    /// Record id → source dataset name.
    pub origin: BTreeMap<String, String>,
    /// Per split, count of class 0 and class 1.
    pub counts: BTreeMap<Split, [usize; 2]>,
}

impl SplitAssignment {
    pub fn size(&self, split: Split) -> usize {
        self.counts.get(&split).map_or(0, |c| c[0] + c[1])
    }

    pub fn get(&self, id: &str) -> Option<Split> {
        self.assignment.get(id).copied()
    }

    /// Records of `dataset` that fall in `split`, in dataset order.
    pub fn select<'a>(&self, records: &'a [Record], split: Split) -> Vec<&'a Record> {
        records.iter().filter(|r| self.get(&r.id) == Some(split)).collect()
    }

    /// Test-split ids grouped by origin.
    pub fn test_by_origin(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (id, s) in &self.assignment {
            if *s == Split::Test {
                out.entry(self.origin[id].as_str()).or_default().push(id);
            }
        }
        out
    }
}

fn check_unique(records: &[Record]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Dataset(format!("duplicate record id `{}`", r.id)));
        }
    }
    Ok(())
}

fn class_indices(records: &[Record]) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        by_class[r.label.class()].push(i);
    }
    by_class
}

fn floor_ceil(n: usize, size: usize, total: usize) -> [usize; 2] {
    let lo = n * size / total;
    let hi = if (n * size).is_multiple_of(total) { lo } else { lo + 1 };
    [lo, hi]
}

fn deviation(got: usize, n: usize, size: usize, total: usize) -> f64 {
    (got as f64 - n as f64 * size as f64 / total as f64).abs()
}

/// Class-0 counts for a sequence of consecutive parts of the given sizes,
/// chosen so every part's class-0 share is within one record of
/// `n0 · size / N`. Class 1 gets the rest of each part.
fn stratify(counts: [usize; 2], sizes: &[usize]) -> Vec<[usize; 2]> {
    let total = counts[0] + counts[1];
    // Cumulative boundaries; each rounds down or up independently, and the
    // candidate with the smallest worst deviation wins (earliest on ties).
    let mut cum_sizes = Vec::new();
    let mut acc = 0;
    for &s in sizes {
        acc += s;
        cum_sizes.push(acc);
    }
    let options: Vec<[usize; 2]> = cum_sizes.iter().map(|&c| floor_ceil(counts[0], c, total)).collect();
    let mut best: Option<(f64, Vec<[usize; 2]>)> = None;
    for mask in 0u32..(1 << sizes.len()) {
        let cum0: Vec<usize> = options
            .iter()
            .enumerate()
            .map(|(i, o)| o[((mask >> i) & 1) as usize])
            .collect();
        let mut parts = Vec::new();
        let mut prev0 = 0usize;
        let mut ok = true;
        let mut worst = 0.0f64;
        for (i, &c0) in cum0.iter().enumerate() {
            if c0 < prev0 {
                ok = false;
                break;
            }
            let p0 = c0 - prev0;
            let Some(p1) = sizes[i].checked_sub(p0) else {
                ok = false;
                break;
            };
            parts.push([p0, p1]);
            worst = worst.max(deviation(p0, counts[0], sizes[i], total));
            prev0 = c0;
        }
        let used: [usize; 2] = parts.iter().fold([0, 0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        if !ok || used[0] > counts[0] || used[1] > counts[1] {
            continue;
        }
        if best.as_ref().is_none_or(|(w, _)| worst < *w - 1e-12) {
            best = Some((worst, parts));
        }
    }
    best.expect("floor choice is always feasible").1
}

fn shuffled_classes(records: &[Record], seed: SeedTree) -> [Vec<usize>; 2] {
    let mut by_class = class_indices(records);
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut seed.indexed("class", c as u64).rng());
    }
    by_class
}

fn check_size(n: usize) -> Result<()> {
    if n < MIN_SPLIT_SIZE {
        return Err(Error::Dataset(format!("{n} records; splitting needs at least {MIN_SPLIT_SIZE}")));
    }
    Ok(())
}

/// Stratified, seeded train/val/test split.
pub fn split(records: &[Record], seed: u64) -> Result<SplitAssignment> {
    check_size(records.len())?;
    check_unique(records)?;
    let n = records.len();
    let t = test_size(n);
    let v = val_size(n - t);
    let by_class = shuffled_classes(records, SeedTree::new(seed).child("split"));
    let counts = [by_class[0].len(), by_class[1].len()];
    let quotas = stratify(counts, &[t, v, n - t - v]);
    let mut out = SplitAssignment {
        seed,
        assignment: BTreeMap::new(),
        origin: BTreeMap::new(),
        counts: BTreeMap::new(),
    };
    for (c, idx) in by_class.iter().enumerate() {
        let mut it = idx.iter();
        for (part, split) in [Split::Test, Split::Val, Split::Train].into_iter().enumerate() {
            for &i in it.by_ref().take(quotas[part][c]) {
                out.assignment.insert(records[i].id.clone(), split);
                out.origin.insert(records[i].id.clone(), records[i].source.clone());
            }
            out.counts.entry(split).or_insert([0, 0])[c] += quotas[part][c];
        }
    }
    Ok(out)
}

/// Concatenates datasets of one scheme; ids become `source:id`.
pub fn combine(datasets: &[Dataset], scheme: LabelScheme, name: &str) -> Result<(Dataset, DatasetManifest)> {
    if datasets.is_empty() {
        return Err(Error::Dataset("nothing to combine".into()));
    }
    let mut records = Vec::new();
    for d in datasets {
        if d.scheme != scheme {
            return Err(Error::Dataset(format!(
                "cannot combine {} ({}) into a {} dataset",
                d.name, d.scheme, scheme
            )));
        }
        for r in &d.records {
            let mut r = r.clone();
            r.id = format!("{}:{}", d.name, r.id);
            r.source = d.name.clone();
            records.push(r);
        }
    }
    check_unique(&records)?;
    let provenance = format!(
        "combined from {}",
        datasets.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join(" + ")
    );
    let combined = Dataset {
        name: name.to_string(),
        scheme,
        records,
    };
    let manifest = combined.manifest(provenance);
    Ok((combined, manifest))
}

/// Reserves a stratified tenth of each dataset for testing, then splits the
/// pooled remainder 75/25. Returns the combined dataset and its assignment.
pub fn combined_split(datasets: &[Dataset], scheme: LabelScheme, name: &str, seed: u64) -> Result<(Dataset, SplitAssignment)> {
    if datasets.len() < 2 {
        return Err(Error::Dataset("combined split needs at least two datasets".into()));
    }
    for d in datasets {
        check_size(d.len())?;
    }
    let (combined, _) = combine(datasets, scheme, name)?;
    let root = SeedTree::new(seed).child("combined-split");
    let mut out = SplitAssignment {
        seed,
        assignment: BTreeMap::new(),
        origin: BTreeMap::new(),
        counts: BTreeMap::new(),
    };
    let mut pool: Vec<usize> = Vec::new();
    let mut offset = 0;
    for (k, d) in datasets.iter().enumerate() {
        let slice = &combined.records[offset..offset + d.len()];
        let by_class = shuffled_classes(slice, root.indexed("dataset", k as u64));
        let counts = [by_class[0].len(), by_class[1].len()];
        let t = stratify(counts, &[test_size(d.len())])[0];
        for (c, idx) in by_class.iter().enumerate() {
            for (j, &i) in idx.iter().enumerate() {
                if j < t[c] {
                    out.assignment.insert(slice[i].id.clone(), Split::Test);
                } else {
                    pool.push(offset + i);
                }
            }
            out.counts.entry(Split::Test).or_insert([0, 0])[c] += t[c];
        }
        offset += d.len();
    }
    pool.sort_unstable();
    let pooled: Vec<Record> = pool.iter().map(|&i| combined.records[i].clone()).collect();
    let by_class = shuffled_classes(&pooled, root.child("pool"));
    let counts = [by_class[0].len(), by_class[1].len()];
    let v = val_size(pooled.len());
    let quotas = stratify(counts, &[v, pooled.len() - v]);
    for (c, idx) in by_class.iter().enumerate() {
        for (j, &i) in idx.iter().enumerate() {
            let s = if j < quotas[0][c] { Split::Val } else { Split::Train };
            out.assignment.insert(pooled[i].id.clone(), s);
        }
        out.counts.entry(Split::Val).or_insert([0, 0])[c] += quotas[0][c];
        out.counts.entry(Split::Train).or_insert([0, 0])[c] += quotas[1][c];
    }
    for r in &combined.records {
        out.origin.insert(r.id.clone(), r.source.clone());
    }
    Ok((combined, out))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifestHeader {
    pub kind: String,
    pub dataset: String,
    pub scheme: LabelScheme,
    pub seed: u64,
    pub counts: BTreeMap<Split, [usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    #[serde(flatten)]
    record: Record,
    split: Split,
}

/// Header line then one canonical record per line with a `split` field.
pub fn write_split_manifest(path: &Path, dataset: &Dataset, assignment: &SplitAssignment) -> Result<()> {
    let header = SplitManifestHeader {
        kind: "split-manifest".into(),
        dataset: dataset.name.clone(),
        scheme: dataset.scheme,
        seed: assignment.seed,
        counts: assignment.counts.clone(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for r in &dataset.records {
        let split = assignment
            .get(&r.id)
            .ok_or_else(|| Error::Dataset(format!("record `{}` has no split", r.id)))?;
        out.push_str(&serde_json::to_string(&SplitLine {
            record: r.clone(),
            split,
        })?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_split_manifest(path: &Path) -> Result<(Dataset, SplitAssignment)> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines();
    let parse = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let header: SplitManifestHeader =
        serde_json::from_str(lines.next().ok_or_else(|| parse(1, "empty manifest".into()))?)
            .map_err(|e| parse(1, e.to_string()))?;
    let mut dataset = Dataset {
        name: header.dataset,
        scheme: header.scheme,
        records: Vec::new(),
    };
    let mut assignment = SplitAssignment {
        seed: header.seed,
        assignment: BTreeMap::new(),
        origin: BTreeMap::new(),
        counts: header.counts,
    };
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: SplitLine = serde_json::from_str(line).map_err(|e| parse(i + 2, e.to_string()))?;
        assignment.assignment.insert(row.record.id.clone(), row.split);
        assignment.origin.insert(row.record.id.clone(), row.record.source.clone());
        dataset.records.push(row.record);
    }
    Ok((dataset, assignment))
}
