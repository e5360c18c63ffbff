//! Writes synthetic datasets in every supported on-disk layout, with the
//! label counts of the published corpora, plus a small separable toy set.
//!
//! cargo run --example synthetic_corpus -- <output-dir> [seed]

use std::path::PathBuf;

use misinfo::data::fixtures::{write_reference_corpus, write_toy_jsonl};
use misinfo::data::load_dataset;

fn main() -> misinfo::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "synthetic-data".into()));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed must be an integer"));
    let corpus = write_reference_corpus(&root, seed)?;
    write_toy_jsonl(&root.join("toy.jsonl"), 64, seed)?;
    for spec in corpus.all() {
        let (_, m) = load_dataset(spec)?;
        println!("{:<10} {:<4} {:>5} records {:?}", m.name, m.scheme, m.total, m.counts);
    }
    println!("toy set: {}", root.join("toy.jsonl").display());
    Ok(())
}
