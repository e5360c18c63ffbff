use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use misinfo::benchmark::{render_report, BenchmarkGrid, ReportFormat};
use misinfo::checkpoint::verify_checkpoint;
use misinfo::config::{PipelineConfig, Settings};
use misinfo::eval::Averaging;
use misinfo::pipeline::{
    benchmark_stage, encode_stage, eval_stage, finetune_stage, ingest, load_split, run_pipeline, split_stage,
    train_head_stage,
};
use misinfo::{Error, Result};

#[derive(Parser)]
#[command(name = "misinfo", about = "Encoder + classifier-head misinformation detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` settings file.
    #[arg(long)]
    config: PathBuf,
    /// Override one setting, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct Seeded {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset and write its label manifest.
    Ingest(ConfigArgs),
    /// Write the stratified train/val/test split manifest.
    Split(Seeded),
    /// Finetune the encoder on the train split.
    Finetune(Seeded),
    /// Encode every record with the saved encoder (cached by checkpoint hash).
    Encode(ConfigArgs),
    /// Train the classifier head on cached vectors.
    TrainHead(Seeded),
    /// Score the saved head on the test split and write reports.
    Eval(ConfigArgs),
    /// Run every stage in order.
    Run(Seeded),
    /// Run the preset × head × seed grid.
    Benchmark(Seeded),
    /// Render a saved grid (`*.jsonl`) as csv or markdown.
    Report {
        grid: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        #[arg(long, default_value = "macro")]
        averaging: String,
    },
    /// Check a checkpoint file and list its tensors.
    Verify { path: PathBuf },
}

/// Commands without randomness still build a full config; their seed is unused.
const UNUSED_SEED: u64 = 0;

fn load(args: &ConfigArgs, seed: u64) -> Result<PipelineConfig> {
    let mut settings = Settings::load(&args.config)?;
    for o in &args.overrides {
        settings.set(o)?;
    }
    PipelineConfig::from_settings(&settings, seed)
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

fn print_grid(grid: &BenchmarkGrid) {
    print!("{}", render_report(grid, ReportFormat::Markdown));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let cfg = load(&a, UNUSED_SEED)?;
            let (_, manifest) = stage("ingest", ingest(&cfg))?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
        }
        Command::Split(a) => {
            let cfg = load(&a.config, a.seed)?;
            let (dataset, _) = stage("ingest", ingest(&cfg))?;
            let s = stage("split", split_stage(&cfg, &dataset))?;
            for (split, c) in &s.counts {
                println!("{split}: {} ({} / {})", c[0] + c[1], c[0], c[1]);
            }
        }
        Command::Finetune(a) => {
            let cfg = load(&a.config, a.seed)?;
            let (dataset, assignment) = stage("finetune", load_split(&cfg))?;
            let model = stage("finetune", finetune_stage(&cfg, &dataset, &assignment))?;
            println!("encoder {} with {} parameters", model.config().preset, model.parameter_count());
        }
        Command::Encode(a) => {
            let cfg = load(&a, UNUSED_SEED)?;
            let (dataset, _) = stage("encode", load_split(&cfg))?;
            let (cache, reused) = stage("encode", encode_stage(&cfg, &dataset))?;
            println!("{} vectors of width {} ({})", cache.len(), cache.hidden_size, if reused { "cached" } else { "encoded" });
        }
        Command::TrainHead(a) => {
            let cfg = load(&a.config, a.seed)?;
            let (dataset, assignment) = stage("train-head", load_split(&cfg))?;
            let (cache, _) = stage("encode", encode_stage(&cfg, &dataset))?;
            let (_, log) = stage("train-head", train_head_stage(&cfg, &dataset, &assignment, &cache))?;
            println!("{} epochs, best epoch {:?}", log.epochs.len(), log.best_epoch);
        }
        Command::Eval(a) => {
            let cfg = load(&a, UNUSED_SEED)?;
            let (dataset, assignment) = stage("eval", load_split(&cfg))?;
            let (cache, _) = stage("encode", encode_stage(&cfg, &dataset))?;
            print_grid(&stage("eval", eval_stage(&cfg, &dataset, &assignment, &cache))?);
        }
        Command::Run(a) => {
            let cfg = load(&a.config, a.seed)?;
            print_grid(&run_pipeline(&cfg)?.grid);
        }
        Command::Benchmark(a) => {
            let cfg = load(&a.config, a.seed)?;
            print_grid(&benchmark_stage(&cfg)?);
        }
        Command::Report {
            grid,
            format,
            averaging,
        } => {
            let text = std::fs::read_to_string(&grid).map_err(|e| Error::Io { path: grid, source: e })?;
            let averaging: Averaging = averaging.parse()?;
            let g = BenchmarkGrid::from_jsonl(&text, averaging)?;
            print!("{}", render_report(&g, format.parse()?));
        }
        Command::Verify { path } => {
            let s = verify_checkpoint(&path)?;
            println!("OK {} (format version {})", path.display(), s.version);
            for e in &s.entries {
                println!("{:<48} {:?}", e.name, e.shape);
            }
            println!("total parameters: {}", s.total_parameters);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
