//! Initialises an encoder preset, pools a sentence vector, saves the weights
//! and reloads them from disk.
//!
//! cargo run --example encoder_checkpoint -- [tiny|small|bert-like]

use misinfo::checkpoint::{verify_checkpoint, Checkpoint};
use misinfo::encoder::{EncoderConfig, EncoderModel, Preset};
use misinfo::tokenizer::{build_vocab, encode};
use misinfo::{SeedTree, Tape};

fn main() -> misinfo::Result<()> {
    let preset: Preset = std::env::args().nth(1).unwrap_or_else(|| "tiny".into()).parse()?;
    let vocab = build_vocab(&["the claim was denied by officials", "officials confirmed the claim"], 300, 1, true)?;
    let config = EncoderConfig::preset(preset, Some(vocab.len()));
    let model = EncoderModel::new(config, SeedTree::new(1).child("encoder"))?;
    println!("{preset}: {} parameters", model.parameter_count());

    let seq = encode("officials denied the claim", &vocab, 12)?;
    let mut tape = Tape::inference();
    let pooled = model.embed_batch(&mut tape, &[seq], false, &mut SeedTree::new(0).rng())?;
    let v = tape.value(pooled);
    println!("sentence vector: width {}, first values {:?}", v.row(0).len(), &v.row(0)[..4]);

    let dir = std::env::temp_dir().join("misinfo-encoder-example");
    std::fs::create_dir_all(&dir).map_err(|e| misinfo::Error::io(&dir, e))?;
    let path = dir.join("encoder.ckpt");
    model.export_weights()?.save(&path)?;
    let summary = verify_checkpoint(&path)?;
    println!("wrote {} ({} tensors)", path.display(), summary.entries.len());

    let reloaded = EncoderModel::from_checkpoint(&Checkpoint::load(&path)?)?;
    let same = reloaded.params().iter().zip(model.params().iter()).all(|((a, x), (b, y))| a == b && x.data() == y.data());
    assert!(same);
    println!("reloaded weights match");
    Ok(())
}
