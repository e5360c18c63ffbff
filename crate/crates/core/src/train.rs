//! Optimisation loops for classifier heads and their hyperparameters.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::heads::{slice_rows, Head, HeadConfig};
use crate::optim::{adam_step, AdamState};
use crate::rng::SeedTree;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub max_len: usize,
    pub eval_batch_size: usize,
}

impl FinetuneConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            lr: 5e-5,
            batch_size: 8,
            epochs: 10,
            seed,
            max_len: 128,
            eval_batch_size: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.eval_batch_size == 0 || self.max_len < 3 {
            return Err(Error::Config(format!("invalid finetune config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            lr: 2e-4,
            batch_size: 512,
            max_epochs: 1000,
            patience: 50,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(format!("invalid train config {self:?}")));
        }
        Ok(())
    }
}

/// Sentence vectors `[N, H]` with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledVectors {
    pub vectors: Tensor,
    pub labels: Vec<usize>,
}

impl LabelledVectors {
    pub fn new(vectors: Tensor, labels: Vec<usize>) -> Result<Self> {
        if vectors.rank() != 2 || vectors.shape()[0] != labels.len() {
            return Err(Error::Shape {
                op: "labelled_vectors",
                lhs: vectors.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        Ok(Self { vectors, labels })
    }

    /// Builds from row vectors; an empty row list yields width `width`.
    pub fn from_rows(rows: &[Vec<f32>], labels: Vec<usize>, width: usize) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Self {
                vectors: Tensor::from_parts(vec![0, width], Vec::new()),
                labels,
            });
        }
        Self::new(Tensor::from_rows(rows)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.vectors.shape()[1]
    }

    fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let w = self.width();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&self.vectors.data()[i * w..(i + 1) * w]);
        }
        (
            Tensor::from_parts(vec![idx.len(), w], data),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned; `None` means the initial weights.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn min_val_loss(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.val_loss).min_by(f64::total_cmp)
    }
}

/// Mean cross-entropy and accuracy of `head` on `data`, dropout off.
pub fn evaluate_head(head: &Head, data: &LabelledVectors, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let logits = head.logits(&data.vectors, batch_size)?;
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for (i, &y) in data.labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        loss += lse - row[y] as f64;
    }
    for (p, &y) in logits.argmax_rows().into_iter().zip(&data.labels) {
        correct += usize::from(p == y);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains a freshly initialised head with Adam and cross-entropy.
///
/// Validation loss is measured after every epoch; the weights with the lowest
/// validation loss are returned, and training stops once `patience` epochs
/// pass without improvement. With an empty validation set the training loss
/// stands in for it.
pub fn train_head(
    train: &LabelledVectors,
    val: &LabelledVectors,
    head_cfg: &HeadConfig,
    cfg: &TrainConfig,
) -> Result<(Head, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if !val.is_empty() && val.width() != train.width() {
        return Err(Error::Shape {
            op: "train_head",
            lhs: train.vectors.shape().to_vec(),
            rhs: val.vectors.shape().to_vec(),
        });
    }
    let seed = SeedTree::new(cfg.seed);
    let mut head = Head::new(head_cfg.clone(), train.width(), seed.child("head"))?;
    let mut log = TrainLog::default();
    let mut classes: Vec<usize> = train.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        let msg = format!("training set contains a single class {classes:?}");
        log::warn!("{msg}");
        log.warnings.push(msg);
    }
    let mut opt = AdamState::new(head.params());
    let mut best = head.params().clone();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0usize;
    let mut dropout_rng = seed.child("dropout").rng();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let eval_batch = cfg.batch_size.max(256);
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut seed.indexed("shuffle", epoch as u64).rng());
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train.gather(chunk);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let logits = head.forward(&mut tape, xv, true, &mut dropout_rng)?;
            let loss = tape.cross_entropy(logits, &y)?;
            total += tape.value(loss).item() as f64 * chunk.len() as f64;
            tape.backward(loss)?;
            head.params_mut().collect_grads(&tape);
            let wd = head.weight_decay();
            adam_step(head.params_mut(), &mut opt, cfg.lr, wd)?;
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_accuracy) = if val.is_empty() {
            evaluate_head(&head, train, eval_batch)?
        } else {
            evaluate_head(&head, val, eval_batch)?
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = head.params().clone();
            log.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    *head.params_mut() = best;
    head.params_mut().zero_grads();
    Ok((head, log))
}

/// Vectors `[N, H]` split into row batches.
pub fn row_batches(m: &Tensor, batch: usize) -> impl Iterator<Item = Tensor> + '_ {
    let n = m.shape()[0];
    (0..n).step_by(batch.max(1)).map(move |s| slice_rows(m, s, (s + batch.max(1)).min(n)))
}
