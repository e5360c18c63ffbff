//! Double-precision forward passes written independently of the tape, used as
//! the finite-difference oracle for whole models. f32 forward passes are too
//! noisy for central differences at h = 1e-3 once a model has a few layers.

use std::collections::BTreeMap;

use misinfo::ParamStore;

use super::gradcheck::{relative_error, Report, STEP};

pub type Params = BTreeMap<String, Vec<f64>>;

pub fn widen(store: &ParamStore) -> Params {
    store
        .iter()
        .map(|(n, t)| (n.to_string(), t.data().iter().map(|&v| f64::from(v)).collect()))
        .collect()
}

/// `x[rows, k] · w[k, n] + b[n]`.
pub fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let k = w.len() / n;
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        for j in 0..n {
            let mut s = b[j];
            for i in 0..k {
                s += x[r * k + i] * w[i * n + j];
            }
            out[r * n + j] = s;
        }
    }
    out
}

pub fn layer_norm_rows(x: &[f64], width: usize, g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(width).zip(out.chunks_mut(width)) {
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..width {
            o[j] = (row[j] - mean) * inv * g[j] + b[j];
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Mean negative log-likelihood of `labels` under row-wise softmax.
pub fn cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

pub struct EncoderShape {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ln_eps: f64,
}

/// Encoder (dropout off) → masked mean pool → `probe.weight/bias` → loss.
pub fn encoder_probe_loss(p: &Params, s: &EncoderShape, ids: &[Vec<usize>], mask: &[Vec<bool>], labels: &[usize]) -> f64 {
    let (h, a) = (s.hidden, s.heads);
    let d = h / a;
    let mut logits = Vec::new();
    for (row_ids, row_mask) in ids.iter().zip(mask) {
        let t = row_ids.len();
        let mut x = vec![0.0; t * h];
        for (i, &id) in row_ids.iter().enumerate() {
            for j in 0..h {
                x[i * h + j] = p["embeddings.word"][id * h + j] + p["embeddings.position"][i * h + j];
            }
        }
        x = layer_norm_rows(&x, h, &p["embeddings.norm.gamma"], &p["embeddings.norm.beta"], s.ln_eps);
        for l in 0..s.layers {
            let w = |n: &str| &p[&format!("layers.{l}.{n}")];
            let q = linear(&x, t, w("attention.query.weight"), w("attention.query.bias"));
            let k = linear(&x, t, w("attention.key.weight"), w("attention.key.bias"));
            let v = linear(&x, t, w("attention.value.weight"), w("attention.value.bias"));
            let mut ctx = vec![0.0; t * h];
            for head in 0..a {
                let off = head * d;
                for i in 0..t {
                    let scores: Vec<f64> = (0..t)
                        .map(|j| {
                            let dot: f64 = (0..d).map(|c| q[i * h + off + c] * k[j * h + off + c]).sum();
                            dot / (d as f64).sqrt() + if row_mask[j] { 0.0 } else { -1e9 }
                        })
                        .collect();
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for j in 0..t {
                        for c in 0..d {
                            ctx[i * h + off + c] += e[j] / z * v[j * h + off + c];
                        }
                    }
                }
            }
            let out = linear(&ctx, t, w("attention.output.weight"), w("attention.output.bias"));
            let res: Vec<f64> = x.iter().zip(&out).map(|(a, b)| a + b).collect();
            let x1 = layer_norm_rows(&res, h, w("attention.norm.gamma"), w("attention.norm.beta"), s.ln_eps);
            let inner: Vec<f64> = linear(&x1, t, w("ffn.inner.weight"), w("ffn.inner.bias"))
                .into_iter()
                .map(gelu)
                .collect();
            let outer = linear(&inner, t, w("ffn.outer.weight"), w("ffn.outer.bias"));
            let res: Vec<f64> = x1.iter().zip(&outer).map(|(a, b)| a + b).collect();
            x = layer_norm_rows(&res, h, w("ffn.norm.gamma"), w("ffn.norm.beta"), s.ln_eps);
        }
        let n = row_mask.iter().filter(|&&m| m).count() as f64;
        let mut pooled = vec![0.0; h];
        for i in (0..t).filter(|&i| row_mask[i]) {
            for j in 0..h {
                pooled[j] += x[i * h + j] / n;
            }
        }
        logits.extend(linear(&pooled, 1, &p["probe.weight"], &p["probe.bias"]));
    }
    cross_entropy(&logits, 2, labels)
}

/// `x[cin, len] ⊛ w[cout, cin, k]`, zero padding, no bias. Returns (out, out_len).
pub fn conv1d(x: &[f64], cin: usize, len: usize, w: &[f64], cout: usize, k: usize, stride: usize, pad: usize) -> (Vec<f64>, usize) {
    let out_len = (len + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * out_len];
    for o in 0..cout {
        for l in 0..out_len {
            let mut s = 0.0;
            for c in 0..cin {
                for j in 0..k {
                    let pos = (l * stride + j) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        s += w[(o * cin + c) * k + j] * x[c * len + pos as usize];
                    }
                }
            }
            out[o * out_len + l] = s;
        }
    }
    (out, out_len)
}

/// Layer norm across channels of `x[ch, len]` at each position.
pub fn channel_norm(x: &[f64], ch: usize, len: usize, g: &[f64], b: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; ch * len];
    for c in 0..ch {
        for l in 0..len {
            t[l * ch + c] = x[c * len + l];
        }
    }
    let n = layer_norm_rows(&t, ch, g, b, 1e-5);
    let mut out = vec![0.0; ch * len];
    for c in 0..ch {
        for l in 0..len {
            out[c * len + l] = n[l * ch + c];
        }
    }
    out
}

pub struct ResNetShape {
    pub stem: usize,
    pub stages: Vec<usize>,
    pub blocks: Vec<usize>,
    pub kernel: usize,
}

/// ResNet head loss. Every ReLU input is appended to `relu_inputs`.
pub fn resnet_loss(p: &Params, s: &ResNetShape, x: &[Vec<f64>], labels: &[usize], relu_inputs: &mut Vec<f64>) -> f64 {
    let k = s.kernel;
    let pad = k / 2;
    let relu = |v: Vec<f64>, log: &mut Vec<f64>| -> Vec<f64> {
        log.extend_from_slice(&v);
        v.into_iter().map(|z| z.max(0.0)).collect()
    };
    let mut logits = Vec::new();
    for sample in x {
        let mut len = sample.len();
        let (h, l) = conv1d(sample, 1, len, &p["resnet.stem.conv"], s.stem, k, 1, pad);
        len = l;
        let h = channel_norm(&h, s.stem, len, &p["resnet.stem.norm.gamma"], &p["resnet.stem.norm.beta"]);
        let mut h = relu(h, relu_inputs);
        let mut ch = s.stem;
        for (stage, (&out_ch, &n)) in s.stages.iter().zip(&s.blocks).enumerate() {
            for b in 0..n {
                let pre = format!("resnet.stage{stage}.block{b}");
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                let (c1, l1) = conv1d(&h, ch, len, &p[&format!("{pre}.conv1")], out_ch, k, stride, pad);
                let c1 = channel_norm(&c1, out_ch, l1, &p[&format!("{pre}.norm1.gamma")], &p[&format!("{pre}.norm1.beta")]);
                let c1 = relu(c1, relu_inputs);
                let (c2, l2) = conv1d(&c1, out_ch, l1, &p[&format!("{pre}.conv2")], out_ch, k, 1, pad);
                let c2 = channel_norm(&c2, out_ch, l2, &p[&format!("{pre}.norm2.gamma")], &p[&format!("{pre}.norm2.beta")]);
                let skip = if stride != 1 || ch != out_ch {
                    conv1d(&h, ch, len, &p[&format!("{pre}.proj")], out_ch, 1, stride, 0).0
                } else {
                    h.clone()
                };
                h = skip.iter().zip(&c2).map(|(a, b)| a + b).collect();
                ch = out_ch;
                len = l2;
            }
        }
        let pooled: Vec<f64> = (0..ch).map(|c| h[c * len..(c + 1) * len].iter().sum::<f64>() / len as f64).collect();
        logits.extend(linear(&pooled, 1, &p["resnet.fc.weight"], &p["resnet.fc.bias"]));
    }
    cross_entropy(&logits, 2, labels)
}

/// MLP head loss, dropout off: GELU between affine layers.
pub fn mlp_loss(p: &Params, layers: usize, x: &[f64], rows: usize, labels: &[usize]) -> f64 {
    let mut h = x.to_vec();
    for i in 0..layers {
        h = linear(&h, rows, &p[&format!("mlp.{i}.weight")], &p[&format!("mlp.{i}.bias")]);
        if i + 1 < layers {
            h = h.into_iter().map(gelu).collect();
        }
    }
    cross_entropy(&h, 2, labels)
}

/// Compares tape gradients `analytic` against central differences of the
/// reference `loss` at each pick. The loss may report kink-sensitive
/// intermediate values; a pick whose ±h evaluations disagree in the sign of
/// any of them sits on a kink, where the derivative is undefined, and is
/// skipped (counted in the returned tuple).
pub fn compare<F>(params: &Params, analytic: &ParamStore, picks: &[(String, usize)], loss: F) -> (Report, usize)
where
    F: Fn(&Params, &mut Vec<f64>) -> f64,
{
    let mut report = Report { checked: 0, worst: 0.0 };
    let mut skipped = 0;
    let h = f64::from(STEP);
    for (name, j) in picks {
        let mut plus = params.clone();
        plus.get_mut(name).unwrap()[*j] += h;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap()[*j] -= h;
        let (mut kp, mut km) = (Vec::new(), Vec::new());
        let numeric = (loss(&plus, &mut kp) - loss(&minus, &mut km)) / (2.0 * h);
        if kp.iter().zip(&km).any(|(a, b)| (*a > 0.0) != (*b > 0.0)) {
            skipped += 1;
            continue;
        }
        let a = analytic.grad(name).unwrap().map_or(0.0, |g| f64::from(g[*j]));
        let err = relative_error(a, numeric);
        report.worst = report.worst.max(err);
        report.checked += 1;
    }
    (report, skipped)
}
