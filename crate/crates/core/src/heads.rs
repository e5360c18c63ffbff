//! Classifier heads mapping a sentence vector `[B, H]` to 2-class logits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::{Rng, SeedTree};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 2;
const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadVariant {
    #[serde(rename = "4L-MLP")]
    Mlp4,
    #[serde(rename = "4L-MLP+Reg+Drop")]
    Mlp4RegDrop,
    #[serde(rename = "10L-ResNet")]
    ResNet10,
    #[serde(rename = "18L-ResNet")]
    ResNet18,
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 4] = [
        HeadVariant::Mlp4,
        HeadVariant::Mlp4RegDrop,
        HeadVariant::ResNet10,
        HeadVariant::ResNet18,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadVariant::Mlp4 => "4L-MLP",
            HeadVariant::Mlp4RegDrop => "4L-MLP+Reg+Drop",
            HeadVariant::ResNet10 => "10L-ResNet",
            HeadVariant::ResNet18 => "18L-ResNet",
        }
    }

    pub fn config(self, input_width: usize) -> HeadConfig {
        match self {
            HeadVariant::Mlp4 => HeadConfig::Mlp(MlpConfig::four_layer(input_width, 0.0, 0.0)),
            HeadVariant::Mlp4RegDrop => HeadConfig::Mlp(MlpConfig::four_layer(input_width, 0.2, 1e-4)),
            HeadVariant::ResNet10 => HeadConfig::ResNet(ResNetConfig::new(ResNetVariant::ResNet10)),
            HeadVariant::ResNet18 => HeadConfig::ResNet(ResNetConfig::new(ResNetVariant::ResNet18)),
        }
    }
}

impl fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let found = match key.as_str() {
            "4l-mlp" | "mlp" | "mlp4" => Some(HeadVariant::Mlp4),
            "4l-mlp+reg+drop" | "mlp-reg-drop" | "mlp4-reg-drop" => Some(HeadVariant::Mlp4RegDrop),
            "10l-resnet" | "resnet10" => Some(HeadVariant::ResNet10),
            "18l-resnet" | "resnet18" => Some(HeadVariant::ResNet18),
            _ => None,
        };
        found.ok_or_else(|| Error::Config(format!("unknown head variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width first, class count last; one weight layer per adjacent pair.
    pub layer_widths: Vec<usize>,
    pub dropout_p: f32,
    pub weight_decay: f32,
}

impl MlpConfig {
    /// `[H, 512, 128, 32, 2]`.
    pub fn four_layer(input_width: usize, dropout_p: f32, weight_decay: f32) -> Self {
        Self {
            layer_widths: vec![input_width, 512, 128, 32, NUM_CLASSES],
            dropout_p,
            weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResNetVariant {
    #[serde(rename = "resnet10")]
    ResNet10,
    #[serde(rename = "resnet18")]
    ResNet18,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetConfig {
    pub variant: ResNetVariant,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub kernel_size: usize,
}

impl ResNetConfig {
    pub fn new(variant: ResNetVariant) -> Self {
        let blocks_per_stage = match variant {
            ResNetVariant::ResNet10 => vec![2, 1, 1],
            ResNetVariant::ResNet18 => vec![3, 3, 2],
        };
        Self {
            variant,
            stem_channels: 16,
            stage_channels: vec![16, 32, 64],
            blocks_per_stage,
            kernel_size: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadConfig {
    Mlp(MlpConfig),
    ResNet(ResNetConfig),
}

impl HeadConfig {
    pub fn weight_decay(&self) -> f32 {
        match self {
            HeadConfig::Mlp(c) => c.weight_decay,
            HeadConfig::ResNet(_) => 0.0,
        }
    }
}

/// Number of weight-bearing layers: affine layers for an MLP; stem conv,
/// two convs per residual block and the final linear for a ResNet. 1×1 skip
/// projections are not counted.
pub fn count_layers(cfg: &HeadConfig) -> usize {
    match cfg {
        HeadConfig::Mlp(c) => c.layer_widths.len().saturating_sub(1),
        HeadConfig::ResNet(c) => 1 + 2 * c.blocks_per_stage.iter().sum::<usize>() + 1,
    }
}

fn kaiming(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
}

#[derive(Debug, Clone, Copy)]
struct BlockPlan {
    name_stage: usize,
    name_block: usize,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
}

impl BlockPlan {
    fn prefix(&self) -> String {
        format!("resnet.stage{}.block{}", self.name_stage, self.name_block)
    }

    fn projected(&self) -> bool {
        self.stride != 1 || self.in_ch != self.out_ch
    }
}

fn block_plan(c: &ResNetConfig) -> Vec<BlockPlan> {
    let mut plan = Vec::new();
    let mut in_ch = c.stem_channels;
    for (s, (&out_ch, &n)) in c.stage_channels.iter().zip(&c.blocks_per_stage).enumerate() {
        for b in 0..n {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            plan.push(BlockPlan {
                name_stage: s,
                name_block: b,
                in_ch,
                out_ch,
                stride,
            });
            in_ch = out_ch;
        }
    }
    plan
}

/// Input, output and skip-path value of one residual block.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    pub input: Var,
    pub skip: Var,
    pub output: Var,
}

/// A head with its weights.
#[derive(Debug, Clone)]
pub struct Head {
    config: HeadConfig,
    input_width: usize,
    params: ParamStore,
}

impl Head {
    pub fn new(config: HeadConfig, input_width: usize, seed: SeedTree) -> Result<Self> {
        let mut rng = seed.child("head-init").rng();
        let mut p = ParamStore::new();
        match &config {
            HeadConfig::Mlp(c) => {
                if c.layer_widths.len() < 2 || c.layer_widths.contains(&0) {
                    return Err(Error::Config(format!("invalid MLP widths {:?}", c.layer_widths)));
                }
                if c.layer_widths[0] != input_width || *c.layer_widths.last().unwrap() != NUM_CLASSES {
                    return Err(Error::Shape {
                        op: "mlp",
                        lhs: vec![input_width, NUM_CLASSES],
                        rhs: c.layer_widths.clone(),
                    });
                }
                if !(0.0..1.0).contains(&c.dropout_p) {
                    return Err(Error::Config(format!("dropout {} outside [0, 1)", c.dropout_p)));
                }
                for (i, w) in c.layer_widths.windows(2).enumerate() {
                    p.insert(format!("mlp.{i}.weight"), kaiming(&[w[0], w[1]], w[0], &mut rng))?;
                    p.insert(format!("mlp.{i}.bias"), Tensor::zeros(vec![w[1]]))?;
                }
            }
            HeadConfig::ResNet(c) => {
                if input_width < c.kernel_size {
                    return Err(Error::invalid(
                        "resnet",
                        format!("input width {input_width} smaller than kernel {}", c.kernel_size),
                    ));
                }
                if c.stage_channels.len() != c.blocks_per_stage.len() || c.kernel_size % 2 == 0 {
                    return Err(Error::Config("invalid ResNet stage plan or even kernel".into()));
                }
                let k = c.kernel_size;
                let norm = |p: &mut ParamStore, name: &str, ch: usize| -> Result<()> {
                    p.insert(format!("{name}.gamma"), Tensor::full(vec![ch], 1.0))?;
                    p.insert(format!("{name}.beta"), Tensor::zeros(vec![ch]))
                };
                p.insert("resnet.stem.conv", kaiming(&[c.stem_channels, 1, k], k, &mut rng))?;
                norm(&mut p, "resnet.stem.norm", c.stem_channels)?;
                for b in block_plan(c) {
                    let pre = b.prefix();
                    p.insert(format!("{pre}.conv1"), kaiming(&[b.out_ch, b.in_ch, k], b.in_ch * k, &mut rng))?;
                    norm(&mut p, &format!("{pre}.norm1"), b.out_ch)?;
                    p.insert(format!("{pre}.conv2"), kaiming(&[b.out_ch, b.out_ch, k], b.out_ch * k, &mut rng))?;
                    norm(&mut p, &format!("{pre}.norm2"), b.out_ch)?;
                    if b.projected() {
                        p.insert(format!("{pre}.proj"), kaiming(&[b.out_ch, b.in_ch, 1], b.in_ch, &mut rng))?;
                    }
                }
                let last = *c.stage_channels.last().unwrap_or(&c.stem_channels);
                p.insert("resnet.fc.weight", kaiming(&[last, NUM_CLASSES], last, &mut rng))?;
                p.insert("resnet.fc.bias", Tensor::zeros(vec![NUM_CLASSES]))?;
            }
        }
        Ok(Self {
            config,
            input_width,
            params: p,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn weight_decay(&self) -> f32 {
        self.config.weight_decay()
    }

    fn check_width(&self, tape: &Tape, x: Var) -> Result<()> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.input_width {
            return Err(Error::Shape {
                op: "head.forward",
                lhs: s.to_vec(),
                rhs: vec![self.input_width],
            });
        }
        Ok(())
    }

    /// `x[B, H]` → logits `[B, 2]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, training: bool, rng: &mut Rng) -> Result<Var> {
        self.check_width(tape, x)?;
        match &self.config {
            HeadConfig::Mlp(c) => self.mlp_forward(c, tape, x, training, rng),
            HeadConfig::ResNet(c) => Ok(self.resnet_forward(c, tape, x)?.0),
        }
    }

    fn mlp_forward(&self, c: &MlpConfig, tape: &mut Tape, mut x: Var, training: bool, rng: &mut Rng) -> Result<Var> {
        let layers = c.layer_widths.len() - 1;
        for i in 0..layers {
            let w = tape.param(&self.params, &format!("mlp.{i}.weight"))?;
            let b = tape.param(&self.params, &format!("mlp.{i}.bias"))?;
            x = tape.linear(x, w, b)?;
            if i + 1 < layers {
                x = tape.gelu(x)?;
                x = tape.dropout(x, c.dropout_p, training, rng)?;
            }
        }
        Ok(x)
    }

    /// Layer norm across channels of `x[B, C, L]` at each position.
    fn channel_norm(&self, tape: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let g = tape.param(&self.params, &format!("{name}.gamma"))?;
        let b = tape.param(&self.params, &format!("{name}.beta"))?;
        let t = tape.permute(x, &[0, 2, 1])?;
        let t = tape.layer_norm(t, g, b, NORM_EPS)?;
        tape.permute(t, &[0, 2, 1])
    }

    /// Logits plus a trace of every residual block.
    pub fn resnet_trace(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<BlockTrace>)> {
        self.check_width(tape, x)?;
        match &self.config {
            HeadConfig::ResNet(c) => self.resnet_forward(c, tape, x),
            HeadConfig::Mlp(_) => Err(Error::invalid("resnet_trace", "head is an MLP")),
        }
    }

    fn resnet_forward(&self, c: &ResNetConfig, tape: &mut Tape, x: Var) -> Result<(Var, Vec<BlockTrace>)> {
        let b = tape.shape(x)[0];
        let pad = c.kernel_size / 2;
        let p = &self.params;
        let signal = tape.reshape(x, &[b, 1, self.input_width])?;
        let w = tape.param(p, "resnet.stem.conv")?;
        let h = tape.conv1d(signal, w, 1, pad)?;
        let h = self.channel_norm(tape, h, "resnet.stem.norm")?;
        let mut h = tape.relu(h)?;
        let mut trace = Vec::new();
        for blk in block_plan(c) {
            let pre = blk.prefix();
            let input = h;
            let w1 = tape.param(p, &format!("{pre}.conv1"))?;
            let br = tape.conv1d(input, w1, blk.stride, pad)?;
            let br = self.channel_norm(tape, br, &format!("{pre}.norm1"))?;
            let br = tape.relu(br)?;
            let w2 = tape.param(p, &format!("{pre}.conv2"))?;
            let br = tape.conv1d(br, w2, 1, pad)?;
            let br = self.channel_norm(tape, br, &format!("{pre}.norm2"))?;
            let skip = if blk.projected() {
                let wp = tape.param(p, &format!("{pre}.proj"))?;
                tape.conv1d(input, wp, blk.stride, 0)?
            } else {
                input
            };
            h = tape.add(skip, br)?;
            trace.push(BlockTrace {
                input,
                skip,
                output: h,
            });
        }
        let pooled = tape.mean_last_axis(h)?;
        let w = tape.param(p, "resnet.fc.weight")?;
        let bias = tape.param(p, "resnet.fc.bias")?;
        Ok((tape.linear(pooled, w, bias)?, trace))
    }

    /// Zeroes both convolutions of every residual block.
    pub fn zero_residual_branches(&mut self) {
        let names: Vec<String> = self
            .params
            .names()
            .filter(|n| n.ends_with(".conv1") || n.ends_with(".conv2"))
            .map(str::to_string)
            .collect();
        for n in names {
            self.params.get_mut(&n).expect("listed").data_mut().fill(0.0);
        }
    }

    /// Argmax predictions (ties → class 0) with dropout disabled.
    pub fn predict(&self, vectors: &Tensor, batch_size: usize) -> Result<Vec<usize>> {
        Ok(self.logits(vectors, batch_size)?.argmax_rows())
    }

    pub fn logits(&self, vectors: &Tensor, batch_size: usize) -> Result<Tensor> {
        let n = vectors.shape()[0];
        let mut rng = SeedTree::new(0).rng();
        let mut out = Vec::with_capacity(n * NUM_CLASSES);
        for start in (0..n).step_by(batch_size.max(1)) {
            let end = (start + batch_size.max(1)).min(n);
            let rows = slice_rows(vectors, start, end);
            let mut tape = Tape::inference();
            let x = tape.constant(rows);
            let y = self.forward(&mut tape, x, false, &mut rng)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(Tensor::from_parts(vec![n, NUM_CLASSES], out))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let cfg = serde_json::json!({ "head": self.config, "input_width": self.input_width });
        Ok(Checkpoint::from_store(&self.params, cfg)?.with_prefix("head."))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: HeadConfig = serde_json::from_value(ck.config["head"].clone())
            .map_err(|e| Error::CorruptHeader(format!("head config: {e}")))?;
        let width = ck.config["input_width"]
            .as_u64()
            .ok_or_else(|| Error::CorruptHeader("head input_width missing".into()))? as usize;
        let mut head = Head::new(config, width, SeedTree::new(0))?;
        ck.clone().strip_prefix("head.")?.load_into(&mut head.params)?;
        Ok(head)
    }
}

pub(crate) fn slice_rows(m: &Tensor, start: usize, end: usize) -> Tensor {
    let w = m.len() / m.shape()[0];
    Tensor::from_parts(vec![end - start, w], m.data()[start * w..end * w].to_vec())
}
