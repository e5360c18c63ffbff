//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation in execution order, so the node list is
//! already topologically sorted and [`Tape::backward`] is one reverse sweep.
//! Parameters from a [`ParamStore`] are bound lazily by name; after the sweep
//! their gradients can be copied back with [`ParamStore::collect_grads`].

use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, transpose_b: bool },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f32 },
    Gelu { x: Var },
    Relu { x: Var },
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, inv_std: Vec<f32> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
    Conv1d { x: Var, w: Var, geom: ConvGeom },
    Dropout { x: Var, mask: Vec<f32> },
    MeanPool { hidden: Var, weights: Vec<f32>, t: usize, h: usize },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    Embedding { table: Var, ids: Vec<usize> },
    PassThrough { x: Var },
    Sum { x: Var },
    MeanLastAxis { x: Var, len: usize },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    lin: usize,
    cout: usize,
    k: usize,
    lout: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations; also the arena that owns every value.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    bindings: HashMap<String, Var>,
    no_grad: bool,
}

/// `c (+)= a · b` for an `m×k` by `k×n` product; `a` and `b` may be strided
/// views (used for transposes), `c` is contiguous row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index sgemm touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn grad_slot(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut Vec<f32> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Unfolds every sample into one `[cin*k, batch*lout]` matrix; sample `b`
/// occupies columns `b*lout..(b+1)*lout`.
fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let n = g.batch * g.lout;
    let mut cols = vec![0.0; g.cin * g.k * n];
    for b in 0..g.batch {
        let xb = &x[b * g.cin * g.lin..(b + 1) * g.cin * g.lin];
        for c in 0..g.cin {
            for kk in 0..g.k {
                let start = (c * g.k + kk) * n + b * g.lout;
                for (o, slot) in cols[start..start + g.lout].iter_mut().enumerate() {
                    let pos = (o * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.lin {
                        *slot = xb[c * g.lin + pos as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let n = g.batch * g.lout;
    for b in 0..g.batch {
        let db = &mut dx[b * g.cin * g.lin..(b + 1) * g.cin * g.lin];
        for c in 0..g.cin {
            for kk in 0..g.k {
                let start = (c * g.k + kk) * n + b * g.lout;
                for (o, &v) in cols[start..start + g.lout].iter().enumerate() {
                    let pos = (o * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.lin {
                        db[c * g.lin + pos as usize] += v;
                    }
                }
            }
        }
    }
}

/// `[batch, ch, len]` ↔ `[ch, batch*len]`.
fn fold_batch(x: &[f32], batch: usize, ch: usize, len: usize, into_columns: bool) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..ch {
            let sample = (b * ch + c) * len;
            let column = c * batch * len + b * len;
            let (from, to) = if into_columns { (sample, column) } else { (column, sample) };
            out[to..to + len].copy_from_slice(&x[from..from + len]);
        }
    }
    out
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn permute_data(src: &[f32], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let Some((&inner_n, outer_shape)) = out_shape.split_last() else {
        return (out_shape, src.to_vec());
    };
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return (out_shape, out);
    }
    let inner_s = gather[gather.len() - 1];
    let mut idx = vec![0usize; outer_shape.len()];
    let mut base = 0usize;
    for _ in 0..src.len() / inner_n {
        if inner_s == 1 {
            out.extend_from_slice(&src[base..base + inner_n]);
        } else {
            out.extend((0..inner_n).map(|i| src[base + i * inner_s]));
        }
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            base += gather[d];
            if idx[d] < outer_shape[d] {
                break;
            }
            base -= gather[d] * outer_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape on which bound parameters never require gradients.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::invalid(op, "produced a non-finite value"));
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let rg = requires_grad && !self.no_grad;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: rg,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a named parameter, reusing the existing leaf if already bound.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bindings.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.leaf(value, true);
        self.bindings.insert(name.to_string(), v);
        Ok(v)
    }

    pub(crate) fn bindings(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bindings.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    /// `a[.., k] · b[k, n]`; leading dimensions of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k;
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            false,
        );
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", Tensor::from_parts(shape, out), Op::MatMul { a, b, m, k, n }, rg)
    }

    /// Batched product over matching leading dimensions:
    /// `a[.., m, k] · b[.., k, n]`, or `a · bᵀ` with `b[.., n, k]`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        let bad = || Error::Shape {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if r < 3 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(bad());
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if transpose_b {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if k != kb {
            return Err(bad());
        }
        let batch = numel(&sa[..r - 2]);
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            let bs = if transpose_b { (1, k) } else { (n, 1) };
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                (k, 1),
                &bd[i * k * n..(i + 1) * k * n],
                bs,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        self.push(
            "bmm",
            Tensor::from_parts(shape, out),
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push("add", Tensor::from_parts(shape, data), Op::Add { a, b }, rg)
    }

    /// Adds `bias[n]` to every length-`n` row along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let bd = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(bd.len()) {
            for (v, b) in row.iter_mut().zip(&bd) {
                *v += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push("add_bias", Tensor::from_parts(sx, data), Op::AddBias { x, bias }, rg)
    }

    /// `x · w + b` with `w[in, out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push("scale", Tensor::from_parts(shape, data), Op::Scale { x, factor }, rg)
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push("gelu", Tensor::from_parts(shape, data), Op::Gelu { x }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push("relu", Tensor::from_parts(shape, data), Op::Relu { x }, rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f32::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(src[base + j * inner]);
                }
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    total += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= total;
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            "softmax",
            Tensor::from_parts(shape, out),
            Op::Softmax { x, outer, len, inner },
            rg,
        )
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let h = *shape.last().unwrap_or(&0);
        for p in [gamma, beta] {
            if self.shape(p) != [h] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if !(eps >= 0.0) {
            return Err(Error::invalid("layer_norm", "eps must be non-negative"));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = src.len() / h;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * h..(r + 1) * h];
            let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / h as f64;
            let var = row
                .iter()
                .map(|&v| (f64::from(v) - mean).powi(2))
                .sum::<f64>()
                / h as f64;
            let denom = var + f64::from(eps);
            let is = if denom > 0.0 { (1.0 / denom.sqrt()) as f32 } else { 0.0 };
            inv_std[r] = is;
            for j in 0..h {
                let xh = (row[j] - mean as f32) * is;
                xhat[r * h + j] = xh;
                out[r * h + j] = xh * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![labels.len()],
            });
        }
        let (b, c) = (shape[0], shape[1]);
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes: c,
            });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0f64;
        for i in 0..b {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = row.iter().map(|&v| f64::from(v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                probs[i * c + j] = (f64::from(row[j] - max) - lse).exp() as f32;
            }
            loss -= f64::from(row[labels[i]] - max) - lse;
        }
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            Tensor::scalar((loss / b as f64) as f32),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Cross-correlation of `x[B, Cin, L]` with `kernels[Cout, Cin, K]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(kernels).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv1d", "stride must be at least 1"));
        }
        let (batch, cin, lin) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        if k > lin + 2 * padding {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel {k} larger than padded input {}", lin + 2 * padding),
            ));
        }
        let lout = (lin + 2 * padding - k) / stride + 1;
        let geom = ConvGeom {
            batch,
            cin,
            lin,
            cout,
            k,
            lout,
            stride,
            padding,
        };
        let xd = self.value(x).data();
        let wd = self.value(kernels).data();
        let cols = im2col(xd, &geom);
        let n = batch * lout;
        let mut folded = vec![0.0; cout * n];
        gemm(cout, cin * k, n, wd, (cin * k, 1), &cols, (n, 1), &mut folded, false);
        let out = fold_batch(&folded, batch, cout, lout, false);
        let rg = self.rg(x) || self.rg(kernels);
        self.push(
            "conv1d",
            Tensor::from_parts(vec![batch, cout, lout], out),
            Op::Conv1d { x, w: kernels, geom },
            rg,
        )
    }

    /// Inverted dropout. Identity when not training or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f32, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p = {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f32> = (0..t.len())
            .map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push("dropout", Tensor::from_parts(shape, data), Op::Dropout { x, mask }, rg)
    }

    /// Average of `hidden[B, T, H]` over positions where `mask[B, T]` is 1.
    pub fn mean_pool(&mut self, hidden: Var, mask: &Tensor) -> Result<Var> {
        let sh = self.shape(hidden).to_vec();
        if sh.len() != 3 || mask.shape() != &sh[..2] {
            return Err(Error::Shape {
                op: "mean_pool",
                lhs: sh,
                rhs: mask.shape().to_vec(),
            });
        }
        let (b, t, h) = (sh[0], sh[1], sh[2]);
        let mut weights = vec![0.0; b * t];
        for i in 0..b {
            let row = mask.row(i);
            let count = row.iter().filter(|&&m| m != 0.0).count();
            if count == 0 {
                return Err(Error::invalid("mean_pool", format!("mask row {i} has no active position")));
            }
            for j in 0..t {
                if row[j] != 0.0 {
                    weights[i * t + j] = 1.0 / count as f32;
                }
            }
        }
        let src = self.value(hidden).data();
        let mut out = vec![0.0; b * h];
        for i in 0..b {
            let acc = &mut out[i * h..(i + 1) * h];
            for j in 0..t {
                let w = weights[i * t + j];
                if w == 0.0 {
                    continue;
                }
                let row = &src[(i * t + j) * h..(i * t + j + 1) * h];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v * w;
                }
            }
        }
        let rg = self.rg(hidden);
        self.push(
            "mean_pool",
            Tensor::from_parts(vec![b, h], out),
            Op::MeanPool { hidden, weights, t, h },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        self.push("reshape", value, Op::Reshape { x }, rg)
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid("permute", format!("{axes:?} is not a permutation for {shape:?}")));
        }
        let (out_shape, data) = permute_data(self.value(x).data(), &shape, axes);
        let rg = self.rg(x);
        self.push(
            "permute",
            Tensor::from_parts(out_shape, data),
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        )
    }

    /// Row lookup: returns `table[ids[i]]` stacked into `out_shape + [H]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], out_shape: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || numel(out_shape) != ids.len() {
            return Err(Error::Shape {
                op: "embedding",
                lhs: st,
                rhs: out_shape.to_vec(),
            });
        }
        let (v, h) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::invalid("embedding", format!("id {bad} >= table size {v}")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            data.extend_from_slice(&src[i * h..(i + 1) * h]);
        }
        let mut shape = out_shape.to_vec();
        shape.push(h);
        let rg = self.rg(table);
        self.push(
            "embedding",
            Tensor::from_parts(shape, data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Adds −1e9 to attention logits `scores[B, .., Tk]` at key positions
    /// where `key_mask[B, Tk]` is 0. Gradient passes through unchanged.
    pub fn mask_keys(&mut self, scores: Var, key_mask: &Tensor) -> Result<Var> {
        let s = self.shape(scores).to_vec();
        let km = key_mask.shape();
        if s.len() < 2 || km.len() != 2 || km[0] != s[0] || km[1] != s[s.len() - 1] {
            return Err(Error::Shape {
                op: "mask_keys",
                lhs: s,
                rhs: km.to_vec(),
            });
        }
        let tk = km[1];
        let per_batch = numel(&s[1..]);
        let mut data = self.value(scores).data().to_vec();
        for b in 0..s[0] {
            let mrow = key_mask.row(b);
            for row in data[b * per_batch..(b + 1) * per_batch].chunks_mut(tk) {
                for (v, &m) in row.iter_mut().zip(mrow) {
                    if m == 0.0 {
                        *v += -1e9;
                    }
                }
            }
        }
        let rg = self.rg(scores);
        self.push("mask_keys", Tensor::from_parts(s, data), Op::PassThrough { x: scores }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().map(|&v| f64::from(v)).sum();
        let rg = self.rg(x);
        self.push("sum", Tensor::scalar(total as f32), Op::Sum { x }, rg)
    }

    /// Average over the last axis: `[.., L] -> [..]`.
    pub fn mean_last_axis(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::invalid("mean_last_axis", "needs rank >= 2"));
        }
        let len = shape[shape.len() - 1];
        let data = self
            .value(x)
            .data()
            .chunks(len)
            .map(|c| (c.iter().map(|&v| f64::from(v)).sum::<f64>() / len as f64) as f32)
            .collect();
        let rg = self.rg(x);
        self.push(
            "mean_last_axis",
            Tensor::from_parts(shape[..shape.len() - 1].to_vec(), data),
            Op::MeanLastAxis { x, len },
            rg,
        )
    }

    /// Populates gradients of every node reachable from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads = std::mem::take(&mut self.grads);
        grads.iter_mut().for_each(|g| *g = None);
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.rg(a) {
                    let da = grad_slot(grads, a, m * k);
                    gemm(m, n, k, g, (n, 1), val(b), (1, n), da, true);
                }
                if self.rg(b) {
                    let db = grad_slot(grads, b, k * n);
                    gemm(k, m, n, val(a), (1, k), g, (n, 1), db, true);
                }
            }
            &Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            } => {
                let (ad, bd) = (val(a), val(b));
                if self.rg(a) {
                    let da = grad_slot(grads, a, batch * m * k);
                    for t in 0..batch {
                        let gb = &g[t * m * n..(t + 1) * m * n];
                        let bb = &bd[t * k * n..(t + 1) * k * n];
                        let bs = if transpose_b { (k, 1) } else { (1, n) };
                        gemm(m, n, k, gb, (n, 1), bb, bs, &mut da[t * m * k..(t + 1) * m * k], true);
                    }
                }
                if self.rg(b) {
                    let db = grad_slot(grads, b, batch * k * n);
                    for t in 0..batch {
                        let gb = &g[t * m * n..(t + 1) * m * n];
                        let ab = &ad[t * m * k..(t + 1) * m * k];
                        let dbb = &mut db[t * k * n..(t + 1) * k * n];
                        if transpose_b {
                            // dB[n,k] = dCᵀ · A
                            gemm(n, m, k, gb, (1, n), ab, (k, 1), dbb, true);
                        } else {
                            gemm(k, m, n, ab, (1, k), gb, (n, 1), dbb, true);
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                for p in [a, b] {
                    if self.rg(p) {
                        let d = grad_slot(grads, p, g.len());
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            &Op::AddBias { x, bias } => {
                if self.rg(x) {
                    let d = grad_slot(grads, x, g.len());
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if self.rg(bias) {
                    let n = len(bias);
                    let d = grad_slot(grads, bias, n);
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            &Op::Scale { x, factor } => {
                if self.rg(x) {
                    let d = grad_slot(grads, x, g.len());
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g * factor);
                }
            }
            &Op::Gelu { x } => {
                if self.rg(x) {
                    let xs = val(x);
                    let d = grad_slot(grads, x, g.len());
                    for ((d, g), &xv) in d.iter_mut().zip(g).zip(xs) {
                        *d += g * gelu_grad(xv);
                    }
                }
            }
            &Op::Relu { x } => {
                if self.rg(x) {
                    let xs = val(x);
                    let d = grad_slot(grads, x, g.len());
                    for ((d, g), &xv) in d.iter_mut().zip(g).zip(xs) {
                        if xv > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            &Op::Softmax { x, outer, len: n, inner } => {
                if self.rg(x) {
                    let y = node.value.data();
                    let d = grad_slot(grads, x, g.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let dot: f32 = (0..n).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                            for j in 0..n {
                                let idx = base + j * inner;
                                d[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let h = len(*gamma);
                let gm = val(*gamma);
                if self.rg(*gamma) {
                    let d = grad_slot(grads, *gamma, h);
                    for (grow, xrow) in g.chunks(h).zip(xhat.chunks(h)) {
                        for j in 0..h {
                            d[j] += grow[j] * xrow[j];
                        }
                    }
                }
                if self.rg(*beta) {
                    let d = grad_slot(grads, *beta, h);
                    for grow in g.chunks(h) {
                        d.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                    }
                }
                if self.rg(*x) {
                    let d = grad_slot(grads, *x, g.len());
                    for (r, (grow, xrow)) in g.chunks(h).zip(xhat.chunks(h)).enumerate() {
                        let mut sum_dxh = 0.0f32;
                        let mut sum_dxh_xh = 0.0f32;
                        for j in 0..h {
                            let dxh = grow[j] * gm[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xrow[j];
                        }
                        let scale = inv_std[r] / h as f32;
                        for j in 0..h {
                            let dxh = grow[j] * gm[j];
                            d[r * h + j] += scale * (h as f32 * dxh - sum_dxh - xrow[j] * sum_dxh_xh);
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if self.rg(*logits) {
                    let b = labels.len();
                    let c = probs.len() / b;
                    let d = grad_slot(grads, *logits, probs.len());
                    let scale = g[0] / b as f32;
                    for i in 0..b {
                        for j in 0..c {
                            let target = if labels[i] == j { 1.0 } else { 0.0 };
                            d[i * c + j] += scale * (probs[i * c + j] - target);
                        }
                    }
                }
            }
            &Op::Conv1d { x, w, geom } => {
                let xd = val(x);
                let wd = val(w);
                let ck = geom.cin * geom.k;
                let n = geom.batch * geom.lout;
                let gf = fold_batch(g, geom.batch, geom.cout, geom.lout, true);
                if self.rg(w) {
                    let cols = im2col(xd, &geom);
                    let dw = grad_slot(grads, w, geom.cout * ck);
                    gemm(geom.cout, n, ck, &gf, (n, 1), &cols, (1, n), dw, true);
                }
                if self.rg(x) {
                    let mut dcols = vec![0.0; ck * n];
                    gemm(ck, geom.cout, n, wd, (1, ck), &gf, (n, 1), &mut dcols, false);
                    let dx = grad_slot(grads, x, geom.batch * geom.cin * geom.lin);
                    col2im_add(&dcols, &geom, dx);
                }
            }
            Op::Dropout { x, mask } => {
                if self.rg(*x) {
                    let d = grad_slot(grads, *x, g.len());
                    for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                        *d += g * m;
                    }
                }
            }
            Op::MeanPool { hidden, weights, t, h } => {
                if self.rg(*hidden) {
                    let (t, h) = (*t, *h);
                    let d = grad_slot(grads, *hidden, weights.len() * h);
                    for (bt, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let b = bt / t;
                        let grow = &g[b * h..(b + 1) * h];
                        for (dv, gv) in d[bt * h..(bt + 1) * h].iter_mut().zip(grow) {
                            *dv += gv * w;
                        }
                    }
                }
            }
            &Op::Reshape { x } | &Op::PassThrough { x } => {
                if self.rg(x) {
                    let d = grad_slot(grads, x, g.len());
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::Permute { x, axes } => {
                if self.rg(*x) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    let (_, back) = permute_data(g, node.value.shape(), &inverse);
                    let d = grad_slot(grads, *x, g.len());
                    d.iter_mut().zip(&back).for_each(|(d, g)| *d += g);
                }
            }
            Op::Embedding { table, ids } => {
                if self.rg(*table) {
                    let n = len(*table);
                    let h = g.len() / ids.len();
                    let d = grad_slot(grads, *table, n);
                    for (r, &id) in ids.iter().enumerate() {
                        for (dv, gv) in d[id * h..(id + 1) * h].iter_mut().zip(&g[r * h..(r + 1) * h]) {
                            *dv += gv;
                        }
                    }
                }
            }
            &Op::Sum { x } => {
                if self.rg(x) {
                    let n = len(x);
                    let d = grad_slot(grads, x, n);
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::MeanLastAxis { x, len: l } => {
                if self.rg(x) {
                    let n = len(x);
                    let d = grad_slot(grads, x, n);
                    for (chunk, &gv) in d.chunks_mut(l).zip(g) {
                        chunk.iter_mut().for_each(|d| *d += gv / l as f32);
                    }
                }
            }
        }
    }
}
