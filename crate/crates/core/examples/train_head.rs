//! Trains each classifier head on two noisy Gaussian blobs and reports test
//! accuracy, standing in for pooled sentence vectors.
//!
//! cargo run --example train_head -- [width]

use misinfo::eval::{evaluate, Averaging};
use misinfo::heads::HeadVariant;
use misinfo::train::{train_head, LabelledVectors, TrainConfig};
use misinfo::SeedTree;
use rand::Rng;
use rand_distr::StandardNormal;

fn blobs(n: usize, width: usize, seed: u64) -> misinfo::Result<LabelledVectors> {
    let mut rng = SeedTree::new(seed).rng();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let centre = if class == 0 { -0.5 } else { 0.5 };
        rows.push((0..width).map(|_| centre + rng.sample::<f32, _>(StandardNormal)).collect());
        labels.push(class);
    }
    LabelledVectors::from_rows(&rows, labels, width)
}

fn main() -> misinfo::Result<()> {
    let width: usize = std::env::args().nth(1).map_or(16, |w| w.parse().expect("width must be an integer"));
    let (train, val, test) = (blobs(400, width, 1)?, blobs(100, width, 2)?, blobs(200, width, 3)?);
    let mut cfg = TrainConfig::new(1);
    cfg.max_epochs = 150;
    cfg.patience = 20;
    for variant in [HeadVariant::Mlp4, HeadVariant::Mlp4RegDrop, HeadVariant::ResNet10, HeadVariant::ResNet18] {
        let (head, log) = train_head(&train, &val, &variant.config(width), &cfg)?;
        let preds = head.predict(&test.vectors, 256)?;
        let m = evaluate(&preds, &test.labels, Averaging::Macro)?;
        println!(
            "{:<18} {:>3} epochs, best {:?}, test accuracy {:.3}",
            variant.name(),
            log.epochs.len(),
            log.best_epoch,
            m.accuracy
        );
    }
    Ok(())
}
