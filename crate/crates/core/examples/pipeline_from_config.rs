//! Writes a settings file next to a toy dataset and runs every stage from
//! it, the same path the `misinfo run` command takes.

use misinfo::config::{PipelineConfig, Settings};
use misinfo::data::fixtures::write_toy_jsonl;
use misinfo::pipeline::run_pipeline;
use misinfo::Error;

const SETTINGS: &str = r#"
dataset_path = "toy.jsonl"
adapter = "canonical-jsonl"
scheme = "T/F"
output_dir = "out"
max_len = 32
finetune_epochs = 3
head_max_epochs = 60
vocab_size = 400
head = "10L-ResNet"
"#;

fn main() -> misinfo::Result<()> {
    let dir = std::env::temp_dir().join("misinfo-pipeline-example");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_toy_jsonl(&dir.join("toy.jsonl"), 80, 4)?;
    let conf = dir.join("run.conf");
    std::fs::write(&conf, SETTINGS).map_err(|e| Error::io(&conf, e))?;

    let cfg = PipelineConfig::from_settings(&Settings::load(&conf)?, 1)?;
    let outcome = run_pipeline(&cfg)?;
    println!("{:?} vectors reused: {}", cfg.head, outcome.cache_reused);
    println!("artifacts in {}", cfg.output_dir.display());
    for e in std::fs::read_dir(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))? {
        let e = e.map_err(|err| Error::io(&cfg.output_dir, err))?;
        println!("  {}", e.file_name().to_string_lossy());
    }
    Ok(())
}
