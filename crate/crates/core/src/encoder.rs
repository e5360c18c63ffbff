//! Transformer encoder with a mean-pooling pooler.
//!
//! Post-norm layout with learned absolute positions:
//! embeddings → LN → L × {self-attention + residual → LN; FFN(GELU) + residual → LN}.

use std::fmt;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::data::Record;
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamState};
use crate::params::{truncated_normal, ParamStore};
use crate::rng::{Rng, SeedTree};
use crate::tensor::Tensor;
use crate::tokenizer::{encode, pad_batch, TokenizedSequence, Vocabulary};
use crate::train::FinetuneConfig;

const INIT_STD: f32 = 0.02;
const LN_EPS: f32 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    BertLike,
    DistilLike,
    RobertaLike,
    Tiny,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::BertLike, Preset::DistilLike, Preset::RobertaLike, Preset::Tiny];

    pub fn name(self) -> &'static str {
        match self {
            Preset::BertLike => "bert-like",
            Preset::DistilLike => "distil-like",
            Preset::RobertaLike => "roberta-like",
            Preset::Tiny => "tiny",
        }
    }

    /// Vocabulary size used when no tokenizer-derived size is supplied.
    pub fn default_vocab_size(self) -> usize {
        match self {
            Preset::BertLike | Preset::DistilLike => 30_522,
            Preset::RobertaLike => 50_265,
            Preset::Tiny => 8_192,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder preset `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub preset: Preset,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub feedforward_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout_p: f32,
}

impl EncoderConfig {
    pub fn preset(preset: Preset, vocab_size: Option<usize>) -> Self {
        let vocab_size = vocab_size.unwrap_or_else(|| preset.default_vocab_size());
        let base = |num_layers, max_positions| EncoderConfig {
            preset,
            num_layers,
            hidden_size: 768,
            num_heads: 12,
            feedforward_size: 3072,
            vocab_size,
            max_positions,
            dropout_p: 0.1,
        };
        match preset {
            Preset::BertLike => base(12, 512),
            Preset::DistilLike => base(6, 512),
            Preset::RobertaLike => base(12, 514),
            Preset::Tiny => EncoderConfig {
                preset,
                num_layers: 2,
                hidden_size: 128,
                num_heads: 2,
                feedforward_size: 512,
                vocab_size,
                max_positions: 256,
                dropout_p: 0.1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::Config(r));
        if self.num_layers < 1 {
            return bad("num_layers must be >= 1".into());
        }
        if self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.num_heads
            ));
        }
        if self.feedforward_size < self.hidden_size {
            return bad("feedforward size must be >= hidden size".into());
        }
        if self.vocab_size == 0 || self.max_positions == 0 {
            return bad("vocab size and max positions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Closed-form parameter count; matches the registry of a built model.
    pub fn parameter_count(&self) -> usize {
        let (h, f) = (self.hidden_size, self.feedforward_size);
        let embeddings = self.vocab_size * h + self.max_positions * h + 2 * h;
        let attention = 4 * (h * h + h) + 2 * h;
        let ffn = h * f + f + f * h + h + 2 * h;
        embeddings + self.num_layers * (attention + ffn)
    }
}

/// One pooled vector per record.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    pub record_id: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: ParamStore,
}

/// Hidden states plus the per-layer attention probabilities `[B, A, T, T]`.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub hidden: Var,
    pub attention: Vec<Var>,
}

fn layer_name(i: usize, rest: &str) -> String {
    format!("layers.{i}.{rest}")
}

impl EncoderModel {
    /// Truncated-normal weights (std 0.02), zero biases, unit layer-norm gains.
    pub fn new(config: EncoderConfig, seed: SeedTree) -> Result<Self> {
        config.validate()?;
        let mut rng = seed.child("encoder-init").rng();
        let (h, f) = (config.hidden_size, config.feedforward_size);
        let mut p = ParamStore::new();
        p.insert("embeddings.word", truncated_normal(&[config.vocab_size, h], INIT_STD, &mut rng))?;
        p.insert(
            "embeddings.position",
            truncated_normal(&[config.max_positions, h], INIT_STD, &mut rng),
        )?;
        p.insert("embeddings.norm.gamma", Tensor::full(vec![h], 1.0))?;
        p.insert("embeddings.norm.beta", Tensor::zeros(vec![h]))?;
        for i in 0..config.num_layers {
            for proj in ["query", "key", "value", "output"] {
                p.insert(
                    layer_name(i, &format!("attention.{proj}.weight")),
                    truncated_normal(&[h, h], INIT_STD, &mut rng),
                )?;
                p.insert(layer_name(i, &format!("attention.{proj}.bias")), Tensor::zeros(vec![h]))?;
            }
            p.insert(layer_name(i, "attention.norm.gamma"), Tensor::full(vec![h], 1.0))?;
            p.insert(layer_name(i, "attention.norm.beta"), Tensor::zeros(vec![h]))?;
            p.insert(layer_name(i, "ffn.inner.weight"), truncated_normal(&[h, f], INIT_STD, &mut rng))?;
            p.insert(layer_name(i, "ffn.inner.bias"), Tensor::zeros(vec![f]))?;
            p.insert(layer_name(i, "ffn.outer.weight"), truncated_normal(&[f, h], INIT_STD, &mut rng))?;
            p.insert(layer_name(i, "ffn.outer.bias"), Tensor::zeros(vec![h]))?;
            p.insert(layer_name(i, "ffn.norm.gamma"), Tensor::full(vec![h], 1.0))?;
            p.insert(layer_name(i, "ffn.norm.beta"), Tensor::zeros(vec![h]))?;
        }
        Ok(Self { config, params: p })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    fn check_inputs(&self, ids: &Tensor, mask: &Tensor) -> Result<(usize, usize, Vec<usize>)> {
        if ids.rank() != 2 || ids.shape() != mask.shape() {
            return Err(Error::Shape {
                op: "encoder.forward",
                lhs: ids.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let (b, t) = (ids.shape()[0], ids.shape()[1]);
        if t > self.config.max_positions {
            return Err(Error::invalid(
                "encoder.forward",
                format!("sequence length {t} exceeds max positions {}", self.config.max_positions),
            ));
        }
        let mut out = Vec::with_capacity(b * t);
        for &v in ids.data() {
            if v < 0.0 || v.fract() != 0.0 || v as usize >= self.config.vocab_size {
                return Err(Error::invalid(
                    "encoder.forward",
                    format!("token id {v} outside vocabulary of {}", self.config.vocab_size),
                ));
            }
            out.push(v as usize);
        }
        Ok((b, t, out))
    }

    /// `ids[B, T]`, `mask[B, T]` → hidden `[B, T, H]`.
    pub fn forward(&self, tape: &mut Tape, ids: &Tensor, mask: &Tensor, training: bool, rng: &mut Rng) -> Result<Var> {
        Ok(self.forward_detailed(tape, ids, mask, training, rng)?.hidden)
    }

    pub fn forward_detailed(
        &self,
        tape: &mut Tape,
        ids: &Tensor,
        mask: &Tensor,
        training: bool,
        rng: &mut Rng,
    ) -> Result<EncoderOutput> {
        let (b, t, ids) = self.check_inputs(ids, mask)?;
        let cfg = &self.config;
        let (h, a) = (cfg.hidden_size, cfg.num_heads);
        let d = h / a;
        let p = &self.params;
        let drop = cfg.dropout_p;

        let word = tape.param(p, "embeddings.word")?;
        let pos = tape.param(p, "embeddings.position")?;
        let tok = tape.embedding(word, &ids, &[b, t])?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let pe = tape.embedding(pos, &positions, &[b, t])?;
        let x = tape.add(tok, pe)?;
        let g = tape.param(p, "embeddings.norm.gamma")?;
        let be = tape.param(p, "embeddings.norm.beta")?;
        let x = tape.layer_norm(x, g, be, LN_EPS)?;
        let mut x = tape.dropout(x, drop, training, rng)?;

        let mut attention = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            let proj = |tape: &mut Tape, name: &str, input: Var| -> Result<Var> {
                let w = tape.param(p, &layer_name(i, &format!("attention.{name}.weight")))?;
                let bias = tape.param(p, &layer_name(i, &format!("attention.{name}.bias")))?;
                tape.linear(input, w, bias)
            };
            let split = |tape: &mut Tape, v: Var| -> Result<Var> {
                let v = tape.reshape(v, &[b, t, a, d])?;
                tape.permute(v, &[0, 2, 1, 3])
            };
            let q = proj(tape, "query", x)?;
            let q = split(tape, q)?;
            let k = proj(tape, "key", x)?;
            let k = split(tape, k)?;
            let v = proj(tape, "value", x)?;
            let v = split(tape, v)?;

            let scores = tape.bmm(q, k, true)?;
            let scores = tape.scale(scores, 1.0 / (d as f32).sqrt())?;
            let scores = tape.mask_keys(scores, mask)?;
            let probs = tape.softmax(scores, 3)?;
            attention.push(probs);
            let probs = tape.dropout(probs, drop, training, rng)?;
            let ctx = tape.bmm(probs, v, false)?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, &[b, t, h])?;
            let out = proj(tape, "output", ctx)?;
            let out = tape.dropout(out, drop, training, rng)?;
            let res = tape.add(x, out)?;
            let g = tape.param(p, &layer_name(i, "attention.norm.gamma"))?;
            let be = tape.param(p, &layer_name(i, "attention.norm.beta"))?;
            let x1 = tape.layer_norm(res, g, be, LN_EPS)?;

            let w1 = tape.param(p, &layer_name(i, "ffn.inner.weight"))?;
            let b1 = tape.param(p, &layer_name(i, "ffn.inner.bias"))?;
            let w2 = tape.param(p, &layer_name(i, "ffn.outer.weight"))?;
            let b2 = tape.param(p, &layer_name(i, "ffn.outer.bias"))?;
            let hdn = tape.linear(x1, w1, b1)?;
            let hdn = tape.gelu(hdn)?;
            let hdn = tape.linear(hdn, w2, b2)?;
            let hdn = tape.dropout(hdn, drop, training, rng)?;
            let res = tape.add(x1, hdn)?;
            let g = tape.param(p, &layer_name(i, "ffn.norm.gamma"))?;
            let be = tape.param(p, &layer_name(i, "ffn.norm.beta"))?;
            x = tape.layer_norm(res, g, be, LN_EPS)?;
        }
        Ok(EncoderOutput { hidden: x, attention })
    }

    /// Pooled sentence vectors `[B, H]` for a tokenized batch.
    pub fn embed_batch(&self, tape: &mut Tape, seqs: &[TokenizedSequence], training: bool, rng: &mut Rng) -> Result<Var> {
        let (ids, mask) = trimmed_batch(seqs)?;
        let hidden = self.forward(tape, &ids, &mask, training, rng)?;
        mean_pool(tape, hidden, &mask)
    }

    /// Full-registry archive in registration order.
    pub fn export_weights(&self) -> Result<Checkpoint> {
        Checkpoint::from_store(&self.params, serde_json::to_value(&self.config)?)
    }

    /// Replaces every parameter from `archive`. All names and shapes are
    /// validated before anything is written.
    pub fn import_weights(&mut self, archive: &Checkpoint) -> Result<()> {
        archive.load_into(&mut self.params)
    }

    pub fn from_checkpoint(archive: &Checkpoint) -> Result<Self> {
        let config: EncoderConfig = serde_json::from_value(archive.config.clone())
            .map_err(|e| Error::CorruptHeader(format!("encoder config: {e}")))?;
        let mut model = EncoderModel::new(config, SeedTree::new(0))?;
        model.import_weights(archive)?;
        Ok(model)
    }
}

/// Averages hidden states over positions where the mask is 1.
pub fn mean_pool(tape: &mut Tape, hidden: Var, mask: &Tensor) -> Result<Var> {
    tape.mean_pool(hidden, mask)
}

/// Stacks a batch and cuts trailing columns that are padding in every row.
/// Pooled outputs are unchanged: masked keys receive exactly zero attention.
pub fn trimmed_batch(seqs: &[TokenizedSequence]) -> Result<(Tensor, Tensor)> {
    let longest = seqs.iter().map(|s| s.true_length).max().unwrap_or(0).max(1);
    let cut: Vec<TokenizedSequence> = seqs
        .iter()
        .map(|s| TokenizedSequence {
            ids: s.ids[..longest.min(s.ids.len())].to_vec(),
            attention_mask: s.attention_mask[..longest.min(s.ids.len())].to_vec(),
            true_length: s.true_length,
        })
        .collect();
    pad_batch(&cut)
}

pub fn tokenize_records(records: &[Record], vocab: &Vocabulary, max_len: usize) -> Result<Vec<TokenizedSequence>> {
    records.iter().map(|r| encode(&r.text, vocab, max_len)).collect()
}

/// Encodes every record with dropout disabled. Order-preserving.
pub fn encode_dataset(
    model: &EncoderModel,
    vocab: &Vocabulary,
    records: &[Record],
    max_len: usize,
    batch_size: usize,
) -> Result<Vec<SentenceVector>> {
    let seqs = tokenize_records(records, vocab, max_len)?;
    let mut rng = SeedTree::new(0).rng();
    let mut out = Vec::with_capacity(records.len());
    for (chunk, recs) in seqs.chunks(batch_size.max(1)).zip(records.chunks(batch_size.max(1))) {
        let mut tape = Tape::inference();
        let pooled = model.embed_batch(&mut tape, chunk, false, &mut rng)?;
        let value = tape.value(pooled);
        for (i, r) in recs.iter().enumerate() {
            out.push(SentenceVector {
                record_id: r.id.clone(),
                values: value.row(i).to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub log: Vec<FinetuneEpoch>,
    /// Epoch whose weights were retained, if any epoch ran.
    pub best_epoch: Option<usize>,
    /// The temporary classification head at the retained epoch. The pipeline
    /// discards it; it is kept here so the selection can be audited.
    pub head: ParamStore,
}

fn init_finetune_head(h: usize, seed: SeedTree) -> Result<ParamStore> {
    let mut rng = seed.child("finetune-head").rng();
    let mut head = ParamStore::new();
    head.insert("finetune.weight", truncated_normal(&[h, 2], INIT_STD, &mut rng))?;
    head.insert("finetune.bias", Tensor::zeros(vec![2]))?;
    Ok(head)
}

/// Logits `[B, 2]` of the temporary head over pooled encoder output.
pub fn finetune_logits(
    model: &EncoderModel,
    head: &ParamStore,
    tape: &mut Tape,
    seqs: &[TokenizedSequence],
    training: bool,
    rng: &mut Rng,
) -> Result<Var> {
    let pooled = model.embed_batch(tape, seqs, training, rng)?;
    let w = tape.param(head, "finetune.weight")?;
    let b = tape.param(head, "finetune.bias")?;
    tape.linear(pooled, w, b)
}

/// (mean loss, accuracy) of the encoder + temporary head in eval mode.
pub fn evaluate_finetune(
    model: &EncoderModel,
    head: &ParamStore,
    seqs: &[TokenizedSequence],
    labels: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if seqs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut rng = SeedTree::new(0).rng();
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for (chunk, labs) in seqs.chunks(batch_size.max(1)).zip(labels.chunks(batch_size.max(1))) {
        let mut tape = Tape::inference();
        let logits = finetune_logits(model, head, &mut tape, chunk, false, &mut rng)?;
        let l = tape.cross_entropy(logits, labs)?;
        loss += f64::from(tape.value(l).item()) * labs.len() as f64;
        correct += tape
            .value(logits)
            .argmax_rows()
            .iter()
            .zip(labs)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok((loss / seqs.len() as f64, correct as f64 / seqs.len() as f64))
}

/// Stage-1 supervised finetuning through a temporary linear head on the
/// mean-pooled output. Keeps the weights of the epoch with the best
/// validation accuracy (earliest on ties; train accuracy when `val` is empty).
pub fn finetune(
    model: &mut EncoderModel,
    vocab: &Vocabulary,
    train: &[Record],
    val: &[Record],
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if train.is_empty() {
        return Err(Error::Dataset("finetune needs a non-empty training set".into()));
    }
    cfg.validate()?;
    let seed = SeedTree::new(cfg.seed).child("finetune");
    let mut head = init_finetune_head(model.config.hidden_size, seed)?;
    let train_seqs = tokenize_records(train, vocab, cfg.max_len)?;
    let train_labels: Vec<usize> = train.iter().map(|r| r.label.class()).collect();
    let val_seqs = tokenize_records(val, vocab, cfg.max_len)?;
    let val_labels: Vec<usize> = val.iter().map(|r| r.label.class()).collect();

    let mut enc_opt = AdamState::new(&model.params);
    let mut head_opt = AdamState::new(&head);
    let mut dropout_rng = seed.child("dropout").rng();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore, ParamStore)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed.indexed("shuffle", epoch as u64).rng());
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<TokenizedSequence> = batch.iter().map(|&i| train_seqs[i].clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let mut tape = Tape::new();
            let logits = finetune_logits(model, &head, &mut tape, &seqs, true, &mut dropout_rng)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            tape.backward(loss)?;
            loss_sum += f64::from(tape.value(loss).item()) * labels.len() as f64;
            correct += tape
                .value(logits)
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            model.params.collect_grads(&tape);
            head.collect_grads(&tape);
            adam_step(&mut model.params, &mut enc_opt, cfg.lr, 0.0)?;
            adam_step(&mut head, &mut head_opt, cfg.lr, 0.0)?;
        }
        let (val_loss, val_accuracy) = evaluate_finetune(model, &head, &val_seqs, &val_labels, cfg.eval_batch_size)?;
        let entry = FinetuneEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        info!(
            "finetune epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            entry.train_loss, entry.train_accuracy, entry.val_loss, entry.val_accuracy
        );
        let score = if val.is_empty() {
            entry.train_accuracy
        } else {
            entry.val_accuracy
        };
        if best.as_ref().is_none_or(|(s, ..)| score > *s) {
            best = Some((score, epoch, model.params.clone(), head.clone()));
        }
        log.push(entry);
    }

    let best_epoch = match best {
        Some((_, epoch, params, best_head)) => {
            model.params = params;
            head = best_head;
            Some(epoch)
        }
        None => None,
    };
    model.params.zero_grads();
    Ok(FinetuneOutcome { log, best_epoch, head })
}
