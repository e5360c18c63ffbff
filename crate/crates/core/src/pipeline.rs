//! Ingest → split → finetune → encode → train head → evaluate → report,
//! with every artifact written to one output directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::benchmark::{fit_encoder, partition, render_report, run_benchmark, BenchmarkCell, BenchmarkGrid, BenchmarkPlan, ReportFormat};
use crate::cache::VectorCache;
use crate::checkpoint::{file_hash, Checkpoint};
use crate::config::PipelineConfig;
use crate::data::{load_dataset, read_split_manifest, split, write_split_manifest, Dataset, DatasetManifest, SplitAssignment};
use crate::encoder::{encode_dataset, EncoderModel};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::heads::Head;
use crate::tokenizer::Vocabulary;
use crate::train::{train_head, TrainLog};

/// File layout of an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }

    pub fn dataset_manifest(&self) -> PathBuf {
        self.dir.join("dataset_manifest.json")
    }
    pub fn split_manifest(&self) -> PathBuf {
        self.dir.join("split.jsonl")
    }
    pub fn encoder_checkpoint(&self) -> PathBuf {
        self.dir.join("encoder.ckpt")
    }
    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }
    pub fn finetune_log(&self) -> PathBuf {
        self.dir.join("finetune_log.json")
    }
    pub fn vectors(&self) -> PathBuf {
        self.dir.join("vectors.bin")
    }
    pub fn head_checkpoint(&self) -> PathBuf {
        self.dir.join("head.ckpt")
    }
    pub fn train_log(&self) -> PathBuf {
        self.dir.join("train_log.json")
    }
    pub fn report(&self, format: ReportFormat) -> PathBuf {
        self.dir.join(format!("report.{}", format.extension()))
    }
    pub fn grid(&self) -> PathBuf {
        self.dir.join("grid.jsonl")
    }
    pub fn benchmark_report(&self, format: ReportFormat) -> PathBuf {
        self.dir.join(format!("benchmark.{}", format.extension()))
    }
    pub fn benchmark_grid(&self) -> PathBuf {
        self.dir.join("benchmark.jsonl")
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

pub fn ingest(cfg: &PipelineConfig) -> Result<(Dataset, DatasetManifest)> {
    let ws = Workspace::new(&cfg.output_dir);
    ws.create()?;
    let (dataset, manifest) = load_dataset(&cfg.dataset)?;
    write_json(&ws.dataset_manifest(), &manifest)?;
    info!("ingested {} records from {}", dataset.len(), cfg.dataset.path.display());
    Ok((dataset, manifest))
}

pub fn split_stage(cfg: &PipelineConfig, dataset: &Dataset) -> Result<SplitAssignment> {
    let ws = Workspace::new(&cfg.output_dir);
    ws.create()?;
    let assignment = split(&dataset.records, cfg.seed)?;
    write_split_manifest(&ws.split_manifest(), dataset, &assignment)?;
    Ok(assignment)
}

pub fn load_split(cfg: &PipelineConfig) -> Result<(Dataset, SplitAssignment)> {
    read_split_manifest(&Workspace::new(&cfg.output_dir).split_manifest())
}

/// Finetunes `cfg.preset` and writes the encoder checkpoint, vocabulary and log.
pub fn finetune_stage(cfg: &PipelineConfig, dataset: &Dataset, assignment: &SplitAssignment) -> Result<EncoderModel> {
    let ws = Workspace::new(&cfg.output_dir);
    let [train, val, _] = partition(dataset, assignment);
    let fitted = fit_encoder(cfg.preset, &train, &val, &cfg.vocab, &cfg.finetune)?;
    fitted.model.export_weights()?.save(&ws.encoder_checkpoint())?;
    fitted.vocab.save(&ws.vocab())?;
    write_json(&ws.finetune_log(), &fitted.outcome.log)?;
    Ok(fitted.model)
}

/// Encodes every record with the saved encoder, reusing `vectors.bin` when it
/// was produced by a byte-identical checkpoint. Returns the cache and whether
/// it was reused.
pub fn encode_stage(cfg: &PipelineConfig, dataset: &Dataset) -> Result<(VectorCache, bool)> {
    let ws = Workspace::new(&cfg.output_dir);
    let fingerprint = file_hash(&ws.encoder_checkpoint())?;
    if ws.vectors().is_file() {
        if let Ok(cache) = VectorCache::load(&ws.vectors()) {
            if cache.matches(&dataset.name, &fingerprint, &dataset.records) {
                info!("vector cache hit for encoder {}", &fingerprint[..12]);
                return Ok((cache, true));
            }
        }
    }
    let model = EncoderModel::from_checkpoint(&Checkpoint::load(&ws.encoder_checkpoint())?)?;
    let vocab = Vocabulary::load(&ws.vocab(), cfg.vocab.lowercase)?;
    let vecs = encode_dataset(&model, &vocab, &dataset.records, cfg.finetune.max_len, cfg.finetune.eval_batch_size)?;
    let ids = vecs.iter().map(|v| v.record_id.clone()).collect();
    let values = vecs.into_iter().flat_map(|v| v.values).collect();
    let cache = VectorCache::new(&dataset.name, &fingerprint, model.config().hidden_size, ids, values)?;
    cache.save(&ws.vectors())?;
    Ok((cache, false))
}

pub fn train_head_stage(
    cfg: &PipelineConfig,
    dataset: &Dataset,
    assignment: &SplitAssignment,
    cache: &VectorCache,
) -> Result<(Head, TrainLog)> {
    let ws = Workspace::new(&cfg.output_dir);
    let [train, val, _] = partition(dataset, assignment);
    let (tr, va) = (cache.select(&train)?, cache.select(&val)?);
    let (head, log) = train_head(&tr, &va, &cfg.head.config(cache.hidden_size), &cfg.train)?;
    head.to_checkpoint()?.save(&ws.head_checkpoint())?;
    write_json(&ws.train_log(), &log)?;
    Ok((head, log))
}

/// Scores the saved head on the test split and writes csv / markdown reports.
pub fn eval_stage(cfg: &PipelineConfig, dataset: &Dataset, assignment: &SplitAssignment, cache: &VectorCache) -> Result<BenchmarkGrid> {
    let ws = Workspace::new(&cfg.output_dir);
    let head = Head::from_checkpoint(&Checkpoint::load(&ws.head_checkpoint())?)?;
    let [_, _, test] = partition(dataset, assignment);
    let te = cache.select(&test)?;
    let preds = head.predict(&te.vectors, 1024)?;
    let metrics = evaluate(&preds, &te.labels, cfg.averaging)?;
    let grid = BenchmarkGrid {
        dataset: dataset.name.clone(),
        split_seed: assignment.seed,
        averaging: cfg.averaging,
        cells: vec![BenchmarkCell {
            dataset: dataset.name.clone(),
            split_seed: assignment.seed,
            preset: cfg.preset,
            head: cfg.head,
            seeds: vec![cfg.seed],
            metrics: Some(metrics),
            per_seed: vec![metrics],
            error: None,
        }],
    };
    write_reports(&ws.report(ReportFormat::Csv), &ws.report(ReportFormat::Markdown), &ws.grid(), &grid)?;
    Ok(grid)
}

fn write_reports(csv: &Path, md: &Path, jsonl: &Path, grid: &BenchmarkGrid) -> Result<()> {
    write(csv, render_report(grid, ReportFormat::Csv))?;
    write(md, render_report(grid, ReportFormat::Markdown))?;
    write(jsonl, grid.to_jsonl()?)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub grid: BenchmarkGrid,
    pub manifest: DatasetManifest,
    pub cache_reused: bool,
    pub train_log: TrainLog,
}

/// Runs every stage. A failure is reported as [`Error::Stage`] naming the
/// stage; artifacts written before it are left in place.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let (dataset, manifest) = stage("ingest", ingest(cfg))?;
    let assignment = stage("split", split_stage(cfg, &dataset))?;
    stage("finetune", finetune_stage(cfg, &dataset, &assignment))?;
    let (cache, cache_reused) = stage("encode", encode_stage(cfg, &dataset))?;
    let (_, train_log) = stage("train-head", train_head_stage(cfg, &dataset, &assignment, &cache))?;
    let grid = stage("eval", eval_stage(cfg, &dataset, &assignment, &cache))?;
    Ok(PipelineOutcome {
        grid,
        manifest,
        cache_reused,
        train_log,
    })
}

/// The full grid over `cfg.presets × cfg.heads × cfg.seeds`, written as
/// `benchmark.{csv,md,jsonl}`.
pub fn benchmark_stage(cfg: &PipelineConfig) -> Result<BenchmarkGrid> {
    let (dataset, _) = stage("ingest", ingest(cfg))?;
    let assignment = stage("split", split_stage(cfg, &dataset))?;
    let plan = BenchmarkPlan {
        presets: cfg.presets.clone(),
        heads: cfg.heads.clone(),
        seeds: cfg.seeds.clone(),
        finetune: cfg.finetune.clone(),
        train: cfg.train.clone(),
        vocab: cfg.vocab.clone(),
        averaging: cfg.averaging,
    };
    let grid = stage("benchmark", run_benchmark(&dataset, &assignment, &plan))?;
    let ws = Workspace::new(&cfg.output_dir);
    stage(
        "report",
        write_reports(
            &ws.benchmark_report(ReportFormat::Csv),
            &ws.benchmark_report(ReportFormat::Markdown),
            &ws.benchmark_grid(),
            &grid,
        ),
    )?;
    Ok(grid)
}
