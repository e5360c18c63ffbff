//! Runs a small preset × head × seed grid on a synthetic toy dataset and
//! prints the markdown report.

use misinfo::benchmark::{render_report, run_benchmark, BenchmarkPlan, ReportFormat};
use misinfo::data::fixtures::write_toy_jsonl;
use misinfo::data::{load_dataset, split, Adapter, DatasetSpec, LabelScheme};
use misinfo::encoder::Preset;
use misinfo::heads::HeadVariant;

fn main() -> misinfo::Result<()> {
    let path = std::env::temp_dir().join("misinfo-benchmark-example.jsonl");
    write_toy_jsonl(&path, 80, 3)?;
    let spec = DatasetSpec::new("toy", path, Adapter::CanonicalJsonl, LabelScheme::TrueFalse);
    let (dataset, _) = load_dataset(&spec)?;
    let assignment = split(&dataset.records, 1)?;

    let mut plan = BenchmarkPlan::new(vec![Preset::Tiny], vec![HeadVariant::Mlp4, HeadVariant::ResNet10], 1);
    plan.seeds = vec![1, 2];
    plan.finetune.epochs = 2;
    plan.finetune.max_len = 32;
    plan.train.max_epochs = 40;
    plan.vocab.target_size = 400;
    let grid = run_benchmark(&dataset, &assignment, &plan)?;
    print!("{}", render_report(&grid, ReportFormat::Markdown));
    Ok(())
}
