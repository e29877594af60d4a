use std::sync::Arc;

use rand::Rng;

use super::kernels::{self, Conv2dSpec, ConvGeom};
use super::Tensor;
use crate::error::{config_err, shape_err, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Forward-pass behaviour of dropout and batch normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch-norm uses batch statistics.
    Train,
    /// Dropout active, batch-norm uses its running statistics.
    ///
    /// Keeps the loss a per-sample sum, which sharded synchronous training
    /// relies on to match full-batch updates.
    TrainFrozenNorm,
    /// Dropout off, batch-norm uses running statistics.
    Infer,
}

impl Mode {
    pub fn dropout_active(self) -> bool {
        !matches!(self, Mode::Infer)
    }

    pub fn batch_statistics(self) -> bool {
        matches!(self, Mode::Train)
    }
}

/// Statistics source for [`Tape::batch_norm`].
pub enum NormStats<'a> {
    Batch,
    Running { mean: &'a [f64], var: &'a [f64] },
}

/// Mean and unbiased variance per channel, produced by a batch-statistics
/// normalization so the caller can update its running estimates.
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Bmm { a: Var, b: Var, trans_b: bool, batch: usize, m: usize, k: usize, n: usize },
    AddBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Relu { x: Var, mask: Vec<bool> },
    Gelu { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Map { x: Var, df: fn(f64) -> f64 },
    Softmax { x: Var, cols: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, cols: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, channels: usize, inner: usize, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool { x: Var, inner: usize },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Select { x: Var, axis: usize, index: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Repeat { x: Var, times: usize },
    Dropout { x: Var, mask: Vec<f64> },
    Sum { x: Var },
    Mean { x: Var },
    BceLogits { logits: Var, targets: Vec<f64>, pos_weight: f64 },
    SquaredError { logits: Var, targets: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of a forward computation.
///
/// One tape per worker per step; drop it (or [`Tape::clear`]) once gradients
/// have been read.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    kinks: Kinks,
}

/// Branch choices of the piecewise-linear ops (ReLU masks, max-pool
/// winners) in call order.
#[derive(Clone, Debug, Default)]
pub struct KinkRecord {
    relu: Vec<Vec<bool>>,
    pool: Vec<Vec<usize>>,
}

#[derive(Default)]
enum Kinks {
    #[default]
    Free,
    Record(KinkRecord),
    Replay {
        record: Arc<KinkRecord>,
        relu: usize,
        pool: usize,
    },
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Moves elements of `src` (laid out as `shape`) into the order given by
/// `perm`; with `inverse` the mapping runs the other way.
fn permute_data(src: &[f64], shape: &[usize], perm: &[usize], inverse: bool) -> Vec<f64> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    // stride in the source for each output axis
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![0.0; src.len()];
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for o in 0..src.len() {
        if inverse {
            out[offset] = src[o];
        } else {
            out[o] = src[offset];
        }
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            offset += gather[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= gather[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape that remembers every ReLU mask and max-pool winner.
    pub fn recording_kinks() -> Self {
        Tape { kinks: Kinks::Record(KinkRecord::default()), ..Tape::default() }
    }

    /// A tape whose ReLU and max-pool ops reuse the branch choices of an
    /// earlier recording instead of their inputs, making the recorded
    /// computation smooth around the recorded point. Calls beyond the
    /// recording, or of a different size, decide from their inputs.
    pub fn replaying_kinks(record: Arc<KinkRecord>) -> Self {
        Tape { kinks: Kinks::Replay { record, relu: 0, pool: 0 }, ..Tape::default() }
    }

    pub fn take_kinks(&mut self) -> Option<KinkRecord> {
        match std::mem::take(&mut self.kinks) {
            Kinks::Record(r) => Some(r),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape matches its data")
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        #[cfg(debug_assertions)]
        if !matches!(op, Op::Leaf) && data.iter().any(|v| !v.is_finite()) {
            let inputs_finite = self.inputs_of(&op).iter().all(|i| self.nodes[i.0].data.iter().all(|v| v.is_finite()));
            assert!(!inputs_finite, "non-finite output from finite inputs");
        }
        self.nodes.push(Node { shape, data, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a tensor; it participates in gradients iff it requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul of {:?} and {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(m, k, n, self.value(a), self.value(b), &mut out);
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, ng))
    }

    /// Batched matmul over 3-d operands `[batch, m, k] · [batch, k, n]`, or
    /// `[batch, m, k] · [batch, n, k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(shape_err!("bmm of {:?} and {:?} (trans_b = {})", sa, sb, trans_b));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..batch {
                let ai = &av[i * m * k..(i + 1) * m * k];
                let bi = &bv[i * k * n..(i + 1) * k * n];
                let oi = &mut out[i * m * n..(i + 1) * m * n];
                if trans_b {
                    kernels::gemm_nt(m, k, n, ai, bi, oi);
                } else {
                    kernels::gemm_nn(m, k, n, ai, bi, oi);
                }
            }
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![batch, m, n], out, Op::Bmm { a, b, trans_b, batch, m, k, n }, ng))
    }

    /// Adds `bias` to every trailing block of `x`; `x.shape` must end with
    /// `bias.shape`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(shape_err!("cannot broadcast bias {:?} onto {:?}", sb, sx));
        }
        let shape = sx.to_vec();
        let bv = self.value(bias);
        let blen = bv.len();
        let out: Vec<f64> = self.value(x).iter().enumerate().map(|(i, v)| v + bv[i % blen]).collect();
        let ng = self.needs(&[x, bias]);
        Ok(self.push(shape, out, Op::AddBias { x, bias }, ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("{} of {:?} and {:?}", what, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let ng = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, c }, ng)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let ng = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let replayed = match &mut self.kinks {
            Kinks::Replay { record, relu, .. } => record.relu.get(*relu).filter(|m| m.len() == n).map(|m| {
                *relu += 1;
                m.clone()
            }),
            _ => None,
        };
        let xv = self.value(x);
        let mask = replayed.unwrap_or_else(|| xv.iter().map(|&v| v > 0.0).collect());
        let out = xv.iter().zip(&mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        if let Kinks::Record(r) = &mut self.kinks {
            r.relu.push(mask.clone());
        }
        let ng = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Relu { x, mask }, ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    /// Elementwise `f` with a caller-supplied derivative `df`.
    pub fn map(&mut self, x: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        self.unary(x, f, Op::Map { x, df })
    }

    /// Softmax over the last axis, max-shifted for stability.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| shape_err!("softmax of a scalar"))?;
        let mut out = self.value(x).to_vec();
        if cols > 0 {
            for row in out.chunks_mut(cols) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    s += *v;
                }
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Softmax { x, cols }, ng))
    }

    /// Softmax along an arbitrary axis.
    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let nd = self.shape(x).len();
        if axis >= nd {
            return Err(shape_err!("softmax axis {} out of range for {:?}", axis, self.shape(x)));
        }
        if axis == nd - 1 {
            return self.softmax(x);
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(axis, nd - 1);
        let moved = self.permute(x, &perm)?;
        let s = self.softmax(moved)?;
        self.permute(s, &perm)
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| shape_err!("layer_norm of a scalar"))?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(shape_err!("layer_norm over {} features with gamma {:?} and beta {:?}", cols, self.shape(gamma), self.shape(beta)));
        }
        let rows = self.value(x).len() / cols.max(1);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        {
            let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
            for r in 0..rows {
                let row = &xv[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[r] = is;
                for c in 0..cols {
                    let h = (row[c] - mean) * is;
                    xhat[r * cols + c] = h;
                    out[r * cols + c] = g[c] * h + b[c];
                }
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(shape, out, Op::LayerNorm { x, gamma, beta, cols, xhat, inv_std }, ng))
    }

    /// Batch normalization over axis 1 of a `[batch, channels, ...]` input.
    ///
    /// With [`NormStats::Batch`] the batch moments are returned so the caller
    /// can update running statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: NormStats<'_>) -> Result<(Var, Option<BatchMoments>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(shape_err!("batch_norm needs [batch, channels, ...], got {:?}", shape));
        }
        let (batch, channels) = (shape[0], shape[1]);
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(shape_err!("batch_norm over {} channels with gamma {:?} and beta {:?}", channels, self.shape(gamma), self.shape(beta)));
        }
        let inner: usize = shape[2..].iter().product();
        let count = batch * inner;
        let batch_stats = matches!(stats, NormStats::Batch);
        if batch_stats && batch < 2 {
            return Err(config_err!("batch normalization in training mode needs at least 2 samples, got {}", batch));
        }
        let xv = self.value(x);
        let (mean, var): (Vec<f64>, Vec<f64>) = match stats {
            NormStats::Batch => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        mean[c] += xv[(b * channels + c) * inner..][..inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for b in 0..batch {
                    for c in 0..channels {
                        var[c] += xv[(b * channels + c) * inner..][..inner].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(shape_err!("running statistics of length {} for {} channels", mean.len(), channels));
                }
                (mean.to_vec(), var.to_vec())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let (g, bta) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * inner;
                for i in base..base + inner {
                    let h = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bta[c];
                }
            }
        }
        let moments = batch_stats.then(|| {
            let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
            BatchMoments { mean: mean.clone(), var: var.iter().map(|v| v * unbias).collect() }
        });
        let ng = self.needs(&[x, gamma, beta]);
        let v = self.push(shape, out, Op::BatchNorm { x, gamma, beta, channels, inner, xhat, inv_std, batch_stats }, ng);
        Ok((v, moments))
    }

    /// 2-d cross-correlation of `[B, C, H, W]` with `[F, C/groups, kH, kW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(shape_err!("conv2d needs 4-d input and kernel, got {:?} and {:?}", sx, sw));
        }
        let g = spec.groups;
        if g == 0 || sx[1] % g != 0 || sw[0] % g != 0 || sw[1] * g != sx[1] {
            return Err(shape_err!("conv2d input {:?} and kernel {:?} incompatible with {} groups", sx, sw, g));
        }
        let (oh, ow) = spec
            .output_size(sx[2], sx[3], sw[2], sw[3])
            .ok_or_else(|| shape_err!("conv2d kernel {:?} larger than padded input {:?} (padding {:?})", sw, sx, spec.padding))?;
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(shape_err!("conv2d bias {:?} for {} filters", self.shape(b), sw[0]));
            }
        }
        let geom = ConvGeom { batch: sx[0], in_ch: sx[1], h: sx[2], w: sx[3], out_ch: sw[0], kh: sw[2], kw: sw[3], oh, ow, spec };
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let ng = self.needs(&inputs);
        Ok(self.push(vec![sx[0], sw[0], oh, ow], out, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// Non-overlapping max pooling over the two trailing axes of a 4-d input.
    pub fn max_pool2d(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || kh == 0 || kw == 0 || kh > s[2] || kw > s[3] {
            return Err(shape_err!("max_pool2d {}x{} over {:?}", kh, kw, s));
        }
        let (oh, ow) = (s[2] / kh, s[3] / kw);
        let planes = s[0] * s[1];
        let replayed = match &mut self.kinks {
            Kinks::Replay { record, pool, .. } => record.pool.get(*pool).filter(|a| a.len() == planes * oh * ow).map(|a| {
                *pool += 1;
                a.clone()
            }),
            _ => None,
        };
        let xv = self.value(x);
        let argmax = replayed.unwrap_or_else(|| {
            let mut argmax = Vec::with_capacity(planes * oh * ow);
            for p in 0..planes {
                let base = p * s[2] * s[3];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + oy * kh * s[3] + ox * kw;
                        for i in 0..kh {
                            for j in 0..kw {
                                let idx = base + (oy * kh + i) * s[3] + ox * kw + j;
                                if xv[idx] > xv[best] {
                                    best = idx;
                                }
                            }
                        }
                        argmax.push(best);
                    }
                }
            }
            argmax
        });
        let out = argmax.iter().map(|&i| xv[i]).collect();
        if let Kinks::Record(r) = &mut self.kinks {
            r.pool.push(argmax.clone());
        }
        let ng = self.needs(&[x]);
        Ok(self.push(vec![s[0], s[1], oh, ow], out, Op::MaxPool { x, argmax }, ng))
    }

    /// Averages `[B, C, ...]` over every axis after the channel axis.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 3 {
            return Err(shape_err!("global_avg_pool needs [batch, channels, ...], got {:?}", s));
        }
        let inner: usize = s[2..].iter().product();
        let out = self.value(x).chunks(inner).map(|c| c.iter().sum::<f64>() / inner as f64).collect();
        let ng = self.needs(&[x]);
        Ok(self.push(vec![s[0], s[1]], out, Op::GlobalAvgPool { x, inner }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Reshape { x }, ng))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err!("invalid permutation {:?} for {:?}", perm, s));
        }
        let out = permute_data(self.value(x), &s, perm, false);
        let shape = perm.iter().map(|&p| s[p]).collect();
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Permute { x, perm: perm.to_vec() }, ng))
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return Err(shape_err!("transpose of {:?}", self.shape(x)));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| shape_err!("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err!("concat axis {} out of range for {:?}", axis, first));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(shape_err!("concat along axis {} of {:?} and {:?}", axis, first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = self.needs(parts);
        Ok(self.push(shape, out, Op::Concat { parts: parts.to_vec(), axis }, ng))
    }

    /// Picks `index` along `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || index >= s[axis] {
            return Err(shape_err!("select index {} on axis {} of {:?}", index, axis, s));
        }
        let (outer, size, inner) = split_at_axis(&s, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv[(o * size + index) * inner..][..inner]);
        }
        let mut shape = s;
        shape.remove(axis);
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Select { x, axis, index }, ng))
    }

    /// Keeps `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(shape_err!("narrow [{}, {}) on axis {} of {:?}", start, start + len, axis, s));
        }
        let (outer, size, inner) = split_at_axis(&s, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv[(o * size + start) * inner..][..len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Narrow { x, axis, start }, ng))
    }

    /// Tiles `x` `times` times along its leading axis.
    pub fn repeat(&mut self, x: Var, times: usize) -> Result<Var> {
        let mut shape = self.shape(x).to_vec();
        if shape.is_empty() || times == 0 {
            return Err(shape_err!("repeat {} times of {:?}", times, shape));
        }
        let out = self.value(x).repeat(times);
        shape[0] *= times;
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Repeat { x, times }, ng))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`. Identity when
    /// `p == 0` or the mode disables dropout.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(config_err!("dropout probability must lie in [0, 1), got {}", p));
        }
        if p == 0.0 || !mode.dropout_active() {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let ng = self.needs(&[x]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs(&[x]);
        self.push(vec![], vec![s], Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.needs(&[x]);
        self.push(vec![], vec![s], Op::Mean { x }, ng)
    }

    fn check_targets(&self, logits: Var, targets: &[f64]) -> Result<()> {
        if self.value(logits).len() != targets.len() || targets.is_empty() {
            return Err(shape_err!("{} targets for logits of shape {:?}", targets.len(), self.shape(logits)));
        }
        Ok(())
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`, with
    /// positive terms weighted by `pos_weight`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], pos_weight: f64) -> Result<Var> {
        self.check_targets(logits, targets)?;
        let n = targets.len() as f64;
        let loss = self.value(logits).iter().zip(targets).map(|(&z, &y)| pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z)).sum::<f64>() / n;
        let ng = self.needs(&[logits]);
        Ok(self.push(vec![], vec![loss], Op::BceLogits { logits, targets: targets.to_vec(), pos_weight }, ng))
    }

    /// Mean of `(y - sigmoid(logit))²`.
    pub fn squared_error(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        self.check_targets(logits, targets)?;
        let n = targets.len() as f64;
        let loss = self.value(logits).iter().zip(targets).map(|(&z, &y)| (y - sigmoid(z)).powi(2)).sum::<f64>() / n;
        let ng = self.needs(&[logits]);
        Ok(self.push(vec![], vec![loss], Op::SquaredError { logits, targets: targets.to_vec() }, ng))
    }

    #[cfg(debug_assertions)]
    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Bmm { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::LayerNorm { x, gamma, beta, .. } | Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(*b);
                v
            }
            Op::Concat { parts, .. } => parts.clone(),
            Op::BceLogits { logits, .. } | Op::SquaredError { logits, .. } => vec![*logits],
            Op::Scale { x, .. }
            | Op::Relu { x, .. }
            | Op::Gelu { x }
            | Op::Sigmoid { x }
            | Op::Tanh { x }
            | Op::Map { x, .. }
            | Op::Softmax { x, .. }
            | Op::MaxPool { x, .. }
            | Op::GlobalAvgPool { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Select { x, .. }
            | Op::Narrow { x, .. }
            | Op::Repeat { x, .. }
            | Op::Dropout { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
        }
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every participating
    /// value become available through [`Tape::grad`]; earlier gradients on
    /// this tape are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].shape.is_empty() && self.nodes[loss.0].data.len() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got shape {:?}", self.nodes[loss.0].shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.data.len()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].data.as_slice();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                acc(a, &mut |da| kernels::gemm_nt(m, n, k, g, val(b), da));
                acc(b, &mut |db| kernels::gemm_tn(k, m, n, val(a), g, db));
            }
            &Op::Bmm { a, b, trans_b, batch, m, k, n } => {
                acc(a, &mut |da| {
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let bt = &val(b)[t * k * n..(t + 1) * k * n];
                        let dat = &mut da[t * m * k..(t + 1) * m * k];
                        if trans_b {
                            kernels::gemm_nn(m, n, k, gt, bt, dat);
                        } else {
                            kernels::gemm_nt(m, n, k, gt, bt, dat);
                        }
                    }
                });
                acc(b, &mut |db| {
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &val(a)[t * m * k..(t + 1) * m * k];
                        let dbt = &mut db[t * k * n..(t + 1) * k * n];
                        if trans_b {
                            // d(B[n×k]) = dCᵀ[n×m] · A[m×k]
                            kernels::gemm_tn(n, m, k, gt, at, dbt);
                        } else {
                            kernels::gemm_tn(k, m, n, at, gt, dbt);
                        }
                    }
                });
            }
            &Op::AddBias { x, bias } => {
                acc(x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                acc(bias, &mut |db| {
                    let bl = db.len();
                    for (j, v) in g.iter().enumerate() {
                        db[j % bl] += v;
                    }
                });
            }
            &Op::Add { a, b } => {
                acc(a, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += v));
            }
            &Op::Mul { a, b } => {
                acc(a, &mut |d| d.iter_mut().zip(g).zip(val(b)).for_each(|((d, v), o)| *d += v * o));
                acc(b, &mut |d| d.iter_mut().zip(g).zip(val(a)).for_each(|((d, v), o)| *d += v * o));
            }
            &Op::Scale { x, c } => acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += c * v)),
            Op::Relu { x, mask } => acc(*x, &mut |d| {
                d.iter_mut().zip(g).zip(mask).for_each(|((d, v), &m)| {
                    if m {
                        *d += v
                    }
                })
            }),
            &Op::Gelu { x } => acc(x, &mut |d| d.iter_mut().zip(g).zip(val(x)).for_each(|((d, v), xi)| *d += v * gelu_grad(*xi))),
            &Op::Sigmoid { x } => acc(x, &mut |d| d.iter_mut().zip(g).zip(&node.data).for_each(|((d, v), y)| *d += v * y * (1.0 - y))),
            &Op::Tanh { x } => acc(x, &mut |d| d.iter_mut().zip(g).zip(&node.data).for_each(|((d, v), y)| *d += v * (1.0 - y * y))),
            &Op::Map { x, df } => acc(x, &mut |d| d.iter_mut().zip(g).zip(val(x)).for_each(|((d, v), xi)| *d += v * df(*xi))),
            &Op::Softmax { x, cols } => acc(x, &mut |d| {
                for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(node.data.chunks(cols)) {
                    let s: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dr[c] += yr[c] * (gr[c] - s);
                    }
                }
            }),
            Op::LayerNorm { x, gamma, beta, cols, xhat, inv_std } => {
                let cols = *cols;
                let gv = val(*gamma);
                acc(*x, &mut |d| {
                    for r in 0..inv_std.len() {
                        let (gr, hr) = (&g[r * cols..(r + 1) * cols], &xhat[r * cols..(r + 1) * cols]);
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            s1 += dh;
                            s2 += dh * hr[c];
                        }
                        let k = inv_std[r] / cols as f64;
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            d[r * cols + c] += k * (cols as f64 * dh - s1 - hr[c] * s2);
                        }
                    }
                });
                acc(*gamma, &mut |d| {
                    for (j, (gv, hv)) in g.iter().zip(xhat).enumerate() {
                        d[j % cols] += gv * hv;
                    }
                });
                acc(*beta, &mut |d| {
                    for (j, gv) in g.iter().enumerate() {
                        d[j % cols] += gv;
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, channels, inner, xhat, inv_std, batch_stats } => {
                let (channels, inner) = (*channels, *inner);
                let batch = g.len() / (channels * inner);
                let count = (batch * inner) as f64;
                let gv = val(*gamma);
                let mut sum_g = vec![0.0; channels];
                let mut sum_gh = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * inner;
                        for j in base..base + inner {
                            sum_g[c] += g[j];
                            sum_gh[c] += g[j] * xhat[j];
                        }
                    }
                }
                acc(*x, &mut |d| {
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * inner;
                            for j in base..base + inner {
                                d[j] += if *batch_stats {
                                    gv[c] * inv_std[c] / count * (count * g[j] - sum_g[c] - xhat[j] * sum_gh[c])
                                } else {
                                    gv[c] * inv_std[c] * g[j]
                                };
                            }
                        }
                    }
                });
                acc(*gamma, &mut |d| d.iter_mut().zip(&sum_gh).for_each(|(d, v)| *d += v));
                acc(*beta, &mut |d| d.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += v));
            }
            Op::Conv2d { x, w, b, geom } => {
                let need_x = nodes[x.0].needs_grad;
                let need_w = nodes[w.0].needs_grad;
                let need_b = b.is_some_and(|b| nodes[b.0].needs_grad);
                let mut dx = need_x.then(|| vec![0.0; nodes[x.0].data.len()]);
                let mut dw = need_w.then(|| vec![0.0; nodes[w.0].data.len()]);
                let mut db = need_b.then(|| vec![0.0; geom.out_ch]);
                kernels::conv2d_backward(val(*x), val(*w), g, geom, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                if let Some(dx) = dx {
                    acc(*x, &mut |d| d.iter_mut().zip(&dx).for_each(|(d, v)| *d += v));
                }
                if let Some(dw) = dw {
                    acc(*w, &mut |d| d.iter_mut().zip(&dw).for_each(|(d, v)| *d += v));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    acc(*b, &mut |d| d.iter_mut().zip(&db).for_each(|(d, v)| *d += v));
                }
            }
            Op::MaxPool { x, argmax } => acc(*x, &mut |d| {
                for (gv, &idx) in g.iter().zip(argmax) {
                    d[idx] += gv;
                }
            }),
            &Op::GlobalAvgPool { x, inner } => acc(x, &mut |d| {
                for (chunk, gv) in d.chunks_mut(inner).zip(g) {
                    chunk.iter_mut().for_each(|v| *v += gv / inner as f64);
                }
            }),
            &Op::Reshape { x } => acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += v)),
            Op::Permute { x, perm } => {
                let back = permute_data(g, &nodes[x.0].shape, perm, true);
                acc(*x, &mut |d| d.iter_mut().zip(&back).for_each(|(d, v)| *d += v));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_at_axis(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let size = nodes[p.0].shape[*axis];
                    acc(p, &mut |d| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..][..size * inner];
                            d[o * size * inner..(o + 1) * size * inner].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                        }
                    });
                    offset += size;
                }
            }
            &Op::Select { x, axis, index } => {
                let (outer, size, inner) = split_at_axis(&nodes[x.0].shape, axis);
                acc(x, &mut |d| {
                    for o in 0..outer {
                        d[(o * size + index) * inner..][..inner].iter_mut().zip(&g[o * inner..(o + 1) * inner]).for_each(|(d, v)| *d += v);
                    }
                });
            }
            &Op::Narrow { x, axis, start } => {
                let (outer, size, inner) = split_at_axis(&nodes[x.0].shape, axis);
                let len = node.shape[axis];
                acc(x, &mut |d| {
                    for o in 0..outer {
                        d[(o * size + start) * inner..][..len * inner].iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]).for_each(|(d, v)| *d += v);
                    }
                });
            }
            &Op::Repeat { x, times } => acc(x, &mut |d| {
                let n = d.len();
                for t in 0..times {
                    d.iter_mut().zip(&g[t * n..(t + 1) * n]).for_each(|(d, v)| *d += v);
                }
            }),
            Op::Dropout { x, mask } => acc(*x, &mut |d| d.iter_mut().zip(g).zip(mask).for_each(|((d, v), m)| *d += v * m)),
            &Op::Sum { x } => acc(x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            &Op::Mean { x } => acc(x, &mut |d| {
                let n = d.len() as f64;
                d.iter_mut().for_each(|d| *d += g[0] / n)
            }),
            Op::BceLogits { logits, targets, pos_weight } => acc(*logits, &mut |d| {
                let n = targets.len() as f64;
                for ((d, &z), &y) in d.iter_mut().zip(val(*logits)).zip(targets) {
                    let s = sigmoid(z);
                    *d += g[0] * (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n;
                }
            }),
            Op::SquaredError { logits, targets } => acc(*logits, &mut |d| {
                let n = targets.len() as f64;
                for ((d, &z), &y) in d.iter_mut().zip(val(*logits)).zip(targets) {
                    let s = sigmoid(z);
                    *d += g[0] * -2.0 * (y - s) * s * (1.0 - s) / n;
                }
            }),
        }
    }
}
