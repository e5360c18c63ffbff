//! Splits a synthetic PHEME-style dataset into train/val/test, then combines
//! it with two Twitter-style datasets and splits the union per source.

use misinfo::data::fixtures::write_reference_corpus;
use misinfo::data::{combined_split, load_dataset, split, LabelScheme, Split};

fn main() -> misinfo::Result<()> {
    let root = std::env::temp_dir().join("misinfo-split-example");
    let corpus = write_reference_corpus(&root, 7)?;

    let (pheme2, manifest) = load_dataset(&corpus.pheme2_tf)?;
    println!("{} {}: {:?}, dropped {} unverified", manifest.name, manifest.scheme, manifest.counts, manifest.dropped_unverified);
    let a = split(&pheme2.records, 1)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        println!("  {s:?}: {}", a.size(s));
    }

    let parts: Vec<_> = [&corpus.pheme2_tf, &corpus.twitter15_tf, &corpus.twitter16_tf]
        .into_iter()
        .map(|s| load_dataset(s).map(|(d, _)| d))
        .collect::<misinfo::Result<_>>()?;
    let (combined, a) = combined_split(&parts, LabelScheme::TrueFalse, "combined", 1)?;
    println!("combined T/F: {} records, test {}", combined.len(), a.size(Split::Test));
    for (origin, ids) in a.test_by_origin() {
        println!("  test from {origin}: {}", ids.len());
    }
    Ok(())
}
