//! The (encoder preset × head variant) grid and its csv / markdown reports.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Record, Split, SplitAssignment};
use crate::encoder::{encode_dataset, finetune, EncoderConfig, EncoderModel, FinetuneOutcome, Preset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Averaging, Metrics};
use crate::heads::HeadVariant;
use crate::rng::SeedTree;
use crate::tokenizer::{build_vocab, Vocabulary};
use crate::train::{train_head, FinetuneConfig, LabelledVectors, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub target_size: usize,
    pub min_freq: usize,
    pub lowercase: bool,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            target_size: 8192,
            min_freq: 2,
            lowercase: true,
        }
    }
}

/// An encoder after stage-1 finetuning, with the vocabulary it was built on.
#[derive(Debug, Clone)]
pub struct FittedEncoder {
    pub vocab: Vocabulary,
    pub model: EncoderModel,
    pub outcome: FinetuneOutcome,
}

/// Builds a vocabulary from the training texts, initialises `preset` from
/// `ft.seed` and finetunes it on `train` / `val`.
pub fn fit_encoder(preset: Preset, train: &[Record], val: &[Record], vocab_cfg: &VocabConfig, ft: &FinetuneConfig) -> Result<FittedEncoder> {
    let texts: Vec<&str> = train.iter().map(|r| r.text.as_str()).collect();
    let vocab = build_vocab(&texts, vocab_cfg.target_size, vocab_cfg.min_freq, vocab_cfg.lowercase)?;
    let config = EncoderConfig::preset(preset, Some(vocab.len()));
    if ft.max_len > config.max_positions {
        return Err(Error::Config(format!(
            "max_len {} exceeds {} positions of {preset}",
            ft.max_len, config.max_positions
        )));
    }
    let mut model = EncoderModel::new(config, SeedTree::new(ft.seed).child("encoder"))?;
    let outcome = finetune(&mut model, &vocab, train, val, ft)?;
    Ok(FittedEncoder { vocab, model, outcome })
}

/// Pooled vectors for `records`, paired with their classes.
pub fn vectors_for(fitted: &FittedEncoder, records: &[Record], max_len: usize, batch_size: usize) -> Result<LabelledVectors> {
    let vecs = encode_dataset(&fitted.model, &fitted.vocab, records, max_len, batch_size)?;
    let rows: Vec<Vec<f32>> = vecs.into_iter().map(|v| v.values).collect();
    let labels = records.iter().map(|r| r.label.class()).collect();
    LabelledVectors::from_rows(&rows, labels, fitted.model.config().hidden_size)
}

/// Owned copies of the records in each split.
pub fn partition(dataset: &Dataset, assignment: &SplitAssignment) -> [Vec<Record>; 3] {
    let take = |s| assignment.select(&dataset.records, s).into_iter().cloned().collect();
    [take(Split::Train), take(Split::Val), take(Split::Test)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    pub presets: Vec<Preset>,
    pub heads: Vec<HeadVariant>,
    pub seeds: Vec<u64>,
    /// Template; its seed is replaced by each entry of `seeds`.
    pub finetune: FinetuneConfig,
    /// Template; its seed is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    pub vocab: VocabConfig,
    pub averaging: Averaging,
}

impl BenchmarkPlan {
    pub fn new(presets: Vec<Preset>, heads: Vec<HeadVariant>, seed: u64) -> Self {
        Self {
            presets,
            heads,
            seeds: vec![seed],
            finetune: FinetuneConfig::new(seed),
            train: TrainConfig::new(seed),
            vocab: VocabConfig::default(),
            averaging: Averaging::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub dataset: String,
    pub split_seed: u64,
    pub preset: Preset,
    pub head: HeadVariant,
    pub seeds: Vec<u64>,
    /// Mean over `per_seed`; absent when any seed failed.
    pub metrics: Option<Metrics>,
    pub per_seed: Vec<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkGrid {
    pub dataset: String,
    pub split_seed: u64,
    pub averaging: Averaging,
    pub cells: Vec<BenchmarkCell>,
}

impl BenchmarkGrid {
    pub fn cell(&self, preset: Preset, head: HeadVariant) -> Option<&BenchmarkCell> {
        self.cells.iter().find(|c| c.preset == preset && c.head == head)
    }

    /// One JSON object per cell.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.cells {
            out.push_str(&serde_json::to_string(c)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, averaging: Averaging) -> Result<Self> {
        let cells: Vec<BenchmarkCell> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        let (dataset, split_seed) = cells.first().map_or((String::new(), 0), |c| (c.dataset.clone(), c.split_seed));
        Ok(Self {
            dataset,
            split_seed,
            averaging,
            cells,
        })
    }
}

fn mean_metrics(runs: &[Metrics], averaging: Averaging) -> Metrics {
    let n = runs.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    Metrics {
        accuracy: avg(|m| m.accuracy),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        f1: avg(|m| m.f1),
        averaging,
    }
}

/// Test-set metrics of one trained head.
pub fn score_head(
    train: &LabelledVectors,
    val: &LabelledVectors,
    test: &LabelledVectors,
    variant: HeadVariant,
    cfg: &TrainConfig,
    averaging: Averaging,
) -> Result<(Metrics, TrainLog)> {
    let (head, log) = train_head(train, val, &variant.config(train.width()), cfg)?;
    let preds = head.predict(&test.vectors, 1024)?;
    Ok((evaluate(&preds, &test.labels, averaging)?, log))
}

/// Runs every (preset, head) cell. Each preset is finetuned once per seed and
/// shared by its heads. A failing stage marks the affected cells and the rest
/// of the grid still runs.
pub fn run_benchmark(dataset: &Dataset, assignment: &SplitAssignment, plan: &BenchmarkPlan) -> Result<BenchmarkGrid> {
    if plan.seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one seed".into()));
    }
    let [train, val, test] = partition(dataset, assignment);
    if test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let mut cells = Vec::new();
    for &preset in &plan.presets {
        let mut per_head: Vec<(Vec<Metrics>, Option<String>)> = vec![(Vec::new(), None); plan.heads.len()];
        for &seed in &plan.seeds {
            let ft = FinetuneConfig {
                seed,
                ..plan.finetune.clone()
            };
            let stage1 = fit_encoder(preset, &train, &val, &plan.vocab, &ft)
                .map_err(|e| format!("finetune: {e}"))
                .and_then(|fitted| {
                    let enc = |rs: &[Record]| vectors_for(&fitted, rs, ft.max_len, ft.eval_batch_size);
                    let all = || -> Result<_> { Ok((enc(&train)?, enc(&val)?, enc(&test)?)) };
                    all().map_err(|e| format!("encode: {e}"))
                });
            for (k, &variant) in plan.heads.iter().enumerate() {
                let slot = &mut per_head[k];
                if slot.1.is_some() {
                    continue;
                }
                let result = match &stage1 {
                    Err(e) => Err(e.clone()),
                    Ok((tr, va, te)) => {
                        let cfg = TrainConfig {
                            seed,
                            ..plan.train.clone()
                        };
                        score_head(tr, va, te, variant, &cfg, plan.averaging).map_err(|e| format!("train-head: {e}"))
                    }
                };
                match result {
                    Ok((m, _)) => {
                        info!("{} {preset} {variant} seed {seed}: accuracy {:.4}", dataset.name, m.accuracy);
                        slot.0.push(m);
                    }
                    Err(e) => {
                        warn!("{} {preset} {variant} seed {seed} failed: {e}", dataset.name);
                        slot.1 = Some(e);
                    }
                }
            }
        }
        for (k, (runs, error)) in per_head.into_iter().enumerate() {
            let metrics = (error.is_none()).then(|| mean_metrics(&runs, plan.averaging));
            cells.push(BenchmarkCell {
                dataset: dataset.name.clone(),
                split_seed: assignment.seed,
                preset,
                head: plan.heads[k],
                seeds: plan.seeds.clone(),
                metrics,
                per_seed: runs,
                error,
            });
        }
    }
    Ok(BenchmarkGrid {
        dataset: dataset.name.clone(),
        split_seed: assignment.seed,
        averaging: plan.averaging,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

/// A fraction as a percentage with three decimals: 0.88908 → "88.908".
pub fn percent(x: f64) -> String {
    format!("{:.3}", x * 100.0)
}

fn metric_columns(m: &Metrics) -> [f64; 4] {
    [m.accuracy, m.precision, m.recall, m.f1]
}

/// Rows ordered by preset then head. Failed cells show `FAILED` in place of
/// numbers. Markdown bolds the best value in each metric column.
pub fn render_report(grid: &BenchmarkGrid, format: ReportFormat) -> String {
    let mut cells: Vec<&BenchmarkCell> = grid.cells.iter().collect();
    cells.sort_by_key(|c| (c.preset, c.head));
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str("encoder,head,averaging,A,P,R,F1\n");
            for c in cells {
                let values = match &c.metrics {
                    Some(m) => metric_columns(m).map(percent).join(","),
                    None => ["FAILED"; 4].join(","),
                };
                out.push_str(&format!("{},{},{},{values}\n", c.preset, c.head, grid.averaging));
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| Encoder | Head | Averaging | A | P | R | F1 |\n");
            out.push_str("|---|---|---|---:|---:|---:|---:|\n");
            let mut best = [f64::NEG_INFINITY; 4];
            for m in cells.iter().filter_map(|c| c.metrics.as_ref()) {
                for (b, v) in best.iter_mut().zip(metric_columns(m)) {
                    *b = b.max(v);
                }
            }
            for c in cells {
                let values: Vec<String> = match &c.metrics {
                    Some(m) => metric_columns(m)
                        .iter()
                        .zip(best)
                        .map(|(&v, b)| {
                            if percent(v) == percent(b) {
                                format!("**{}**", percent(v))
                            } else {
                                percent(v)
                            }
                        })
                        .collect(),
                    None => vec!["FAILED".to_string(); 4],
                };
                out.push_str(&format!(
                    "| {} | {} | {} | {} |\n",
                    c.preset,
                    c.head,
                    grid.averaging,
                    values.join(" | ")
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: &[(HeadVariant, f64)]) -> BenchmarkGrid {
        BenchmarkGrid {
            dataset: "d".into(),
            split_seed: 1,
            averaging: Averaging::Macro,
            cells: values
                .iter()
                .map(|&(head, a)| BenchmarkCell {
                    dataset: "d".into(),
                    split_seed: 1,
                    preset: Preset::Tiny,
                    head,
                    seeds: vec![1],
                    metrics: Some(Metrics {
                        accuracy: a,
                        precision: 0.5,
                        recall: 0.25,
                        f1: 1.0 / 3.0,
                        averaging: Averaging::Macro,
                    }),
                    per_seed: vec![],
                    error: None,
                })
                .collect(),
        }
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(0.88908), "88.908");
        assert_eq!(percent(1.0), "100.000");
        assert_eq!(percent(0.0), "0.000");
    }

    #[test]
    fn empty_grid_is_header_only() {
        let g = grid(&[]);
        assert_eq!(render_report(&g, ReportFormat::Csv).lines().count(), 1);
        assert_eq!(render_report(&g, ReportFormat::Markdown).lines().count(), 2);
    }

    #[test]
    fn rows_sorted_and_best_bolded() {
        let g = grid(&[(HeadVariant::ResNet18, 0.9), (HeadVariant::Mlp4, 0.8)]);
        let md = render_report(&g, ReportFormat::Markdown);
        let rows: Vec<&str> = md.lines().skip(2).collect();
        assert!(rows[0].contains("4L-MLP") && rows[1].contains("18L-ResNet"));
        assert!(rows[1].contains("**90.000**") && !rows[0].contains("**80.000**"));
        // tied columns are bold in every row
        assert!(rows.iter().all(|r| r.contains("**50.000**")));
    }

    #[test]
    fn jsonl_round_trip() {
        let g = grid(&[(HeadVariant::Mlp4, 0.7)]);
        let back = BenchmarkGrid::from_jsonl(&g.to_jsonl().unwrap(), Averaging::Macro).unwrap();
        assert_eq!(back, g);
    }
}
