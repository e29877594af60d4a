use crate::error::{shape_err, Result};
use crate::tensor::{attention, AttentionWeights, Conv2dSpec, Var};

use super::config::{ArchKind, ArchParams, ArchitectureConfig};
use super::layers::{BatchNorm, Builder, Conv, Dense, Fwd, Head, LayerNorm};

/// Concrete layer layout; rebuilt from the configuration, never serialized.
#[derive(Clone)]
pub(crate) enum Net {
    Conv(ConvNet),
    Lstm(LstmNet),
    Transformer(TransformerNet),
    Inception(InceptionNet),
    Convnext(ConvnextNet),
    Linear(LinearNet),
}

impl Net {
    pub fn build(cfg: &ArchitectureConfig, b: &mut Builder) -> Result<Net> {
        let (t, nf) = (cfg.tau, cfg.n_features);
        Ok(match &cfg.params {
            ArchParams::Conv { channels, hidden } => Net::Conv(ConvNet::build(cfg.kind, channels, *hidden, t, nf, b)?),
            &ArchParams::Lstm { hidden, layers, head_hidden } => Net::Lstm(LstmNet::build(nf, hidden, layers, head_hidden, b)),
            &ArchParams::Transformer { d_model, heads, ff, blocks, head_hidden } => {
                Net::Transformer(TransformerNet::build(t, nf, d_model, heads, ff, blocks, head_hidden, b))
            }
            ArchParams::InceptionResnet { channels, blocks, branch_kernels, head_hidden } => {
                Net::Inception(InceptionNet::build(*channels, *blocks, branch_kernels, *head_hidden, b))
            }
            &ArchParams::Convnext { channels, blocks, kernel, expansion, head_hidden } => {
                Net::Convnext(ConvnextNet::build(channels, blocks, kernel, expansion, head_hidden, b))
            }
            ArchParams::Linear => Net::Linear(LinearNet { out: b.dense("out", nf, crate::data::HORIZON_WEEKS) }),
        })
    }

    /// `x` is `[B, T, F]`; returns `[B, 4]` logits.
    pub fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        match self {
            Net::Conv(n) => n.forward(f, x),
            Net::Lstm(n) => n.forward(f, x),
            Net::Transformer(n) => n.forward(f, x),
            Net::Inception(n) => n.forward(f, x),
            Net::Convnext(n) => n.forward(f, x),
            Net::Linear(n) => n.forward(f, x),
        }
    }

    /// Output of the first convolution, for conv kinds.
    pub fn first_conv(&self, f: &mut Fwd, x: Var) -> Result<Option<Var>> {
        let img = as_image(f, x)?;
        Ok(match self {
            Net::Conv(n) => Some(n.stages[0].conv.apply(f, img)?),
            Net::Inception(n) => Some(n.stem.apply(f, img)?),
            Net::Convnext(n) => Some(n.stem.apply(f, img)?),
            _ => None,
        })
    }
}

/// `[B, T, F] → [B, 1, T, F]`
fn as_image(f: &mut Fwd, x: Var) -> Result<Var> {
    let s = f.tape.shape(x).to_vec();
    f.tape.reshape(x, [s[0], 1, s[1], s[2]])
}

fn flatten(f: &mut Fwd, x: Var) -> Result<Var> {
    let s = f.tape.shape(x).to_vec();
    let rest = s[1..].iter().product::<usize>();
    f.tape.reshape(x, [s[0], rest])
}

#[derive(Clone)]
pub(crate) struct LinearNet {
    out: Dense,
}

impl LinearNet {
    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        // [B, T, F] → [B, F, T] → mean over days
        let t = f.tape.permute(x, &[0, 2, 1])?;
        let m = f.tape.global_avg_pool(t)?;
        self.out.apply(f, m)
    }
}

#[derive(Clone)]
pub(crate) struct ConvStage {
    conv: Conv,
    norm: BatchNorm,
    pool: Option<(usize, usize)>,
}

#[derive(Clone)]
pub(crate) struct ConvNet {
    stages: Vec<ConvStage>,
    head: Head,
}

impl ConvNet {
    fn build(kind: ArchKind, channels: &[usize], hidden: usize, t: usize, nf: usize, b: &mut Builder) -> Result<ConvNet> {
        let (mut h, mut w, mut c_in) = (t, nf, 1);
        let mut stages = Vec::with_capacity(channels.len());
        for (i, &c) in channels.iter().enumerate() {
            let (kernel, padding, pool) = match (kind, i) {
                (ArchKind::CnnFullWidth, 0) => ((1, nf), (0, 0), Some((2, 1))),
                (ArchKind::CnnFullWidth, _) => ((3, 1), (1, 0), Some((2, 1))),
                (ArchKind::CnnFullHeight, 0) => ((t, 1), (0, 0), None),
                (ArchKind::CnnFullHeight, _) => ((1, 3), (0, 1), None),
                _ => ((3, 3), (1, 1), Some((2, 1))),
            };
            let spec = Conv2dSpec::padded(padding.0, padding.1);
            let (oh, ow) = spec
                .output_size(h, w, kernel.0, kernel.1)
                .ok_or_else(|| shape_err!("{} stage {} kernel {:?} does not fit a {}x{} map", kind, i, kernel, h, w))?;
            let pool = pool.filter(|p| oh >= p.0 && ow >= p.1);
            let (ph, pw) = pool.unwrap_or((1, 1));
            (h, w) = (oh / ph, ow / pw);
            let conv = b.conv(&format!("stage{}.conv", i), c_in, c, kernel, spec, false);
            let norm = b.batch_norm(&format!("stage{}.bn", i), c);
            stages.push(ConvStage { conv, norm, pool });
            c_in = c;
        }
        let head = Head::new(b, c_in * h * w, hidden);
        Ok(ConvNet { stages, head })
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let mut h = as_image(f, x)?;
        for s in &self.stages {
            h = s.conv.apply(f, h)?;
            h = s.norm.apply(f, h)?;
            h = f.tape.relu(h);
            if let Some((ph, pw)) = s.pool {
                h = f.tape.max_pool2d(h, ph, pw)?;
            }
        }
        let h = flatten(f, h)?;
        let h = f.drop(h)?;
        self.head.apply(f, h)
    }
}

#[derive(Clone)]
pub(crate) struct LstmLayer {
    w: usize,
    u: usize,
    b: usize,
}

#[derive(Clone)]
pub(crate) struct LstmNet {
    hidden: usize,
    layers: Vec<LstmLayer>,
    head: Head,
}

impl LstmNet {
    fn build(nf: usize, hidden: usize, n_layers: usize, head_hidden: usize, b: &mut Builder) -> LstmNet {
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let d_in = if l == 0 { nf } else { hidden };
            let input = b.dense(&format!("lstm{}.input", l), d_in, 4 * hidden);
            let u = b.xavier(format!("lstm{}.recurrent", l), &[hidden, 4 * hidden], hidden, 4 * hidden);
            // forget-gate bias starts at one
            b.params[input.b].data_mut()[hidden..2 * hidden].fill(1.0);
            layers.push(LstmLayer { w: input.w, u, b: input.b });
        }
        let head = Head::new(b, hidden, head_hidden);
        LstmNet { hidden, layers, head }
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let s = f.tape.shape(x).to_vec();
        let (batch, steps) = (s[0], s[1]);
        let hs = self.hidden;
        let mut seq = x;
        let mut last = None;
        for (li, layer) in self.layers.iter().enumerate() {
            let (w, u, bias) = (f.var(layer.w), f.var(layer.u), f.var(layer.b));
            let xw = crate::tensor::linear(f.tape, seq, w, Some(bias))?;
            let mut h: Option<Var> = None;
            let mut c: Option<Var> = None;
            let top = li + 1 == self.layers.len();
            let mut outs = Vec::with_capacity(if top { 0 } else { steps });
            for t in 0..steps {
                let mut z = f.tape.select(xw, 1, t)?;
                if let Some(h) = h {
                    let r = f.tape.matmul(h, u)?;
                    z = f.tape.add(z, r)?;
                }
                let gi = f.tape.narrow(z, 1, 0, hs)?;
                let gf = f.tape.narrow(z, 1, hs, hs)?;
                let gg = f.tape.narrow(z, 1, 2 * hs, hs)?;
                let go = f.tape.narrow(z, 1, 3 * hs, hs)?;
                let i = f.tape.sigmoid(gi);
                let g = f.tape.tanh(gg);
                let o = f.tape.sigmoid(go);
                let ig = f.tape.mul(i, g)?;
                let cn = match c {
                    Some(c) => {
                        let fg = f.tape.sigmoid(gf);
                        let fc = f.tape.mul(fg, c)?;
                        f.tape.add(fc, ig)?
                    }
                    None => ig,
                };
                let tc = f.tape.tanh(cn);
                let hn = f.tape.mul(o, tc)?;
                c = Some(cn);
                h = Some(hn);
                if !top {
                    outs.push(f.tape.reshape(hn, [batch, 1, hs])?);
                }
            }
            if top {
                last = h;
            } else {
                let joined = f.tape.concat(&outs, 1)?;
                seq = f.drop(joined)?;
            }
        }
        let h = last.ok_or_else(|| shape_err!("LSTM over an empty sequence"))?;
        let h = f.drop(h)?;
        self.head.apply(f, h)
    }
}

#[derive(Clone)]
pub(crate) struct EncoderBlock {
    ln1: LayerNorm,
    attn: [usize; 8],
    ln2: LayerNorm,
    ff1: Dense,
    ff2: Dense,
}

#[derive(Clone)]
pub(crate) struct TransformerNet {
    heads: usize,
    embed: Dense,
    cls: usize,
    pos: usize,
    blocks: Vec<EncoderBlock>,
    ln: LayerNorm,
    head: Head,
}

impl TransformerNet {
    #[allow(clippy::too_many_arguments)]
    fn build(t: usize, nf: usize, d: usize, heads: usize, ff: usize, n_blocks: usize, head_hidden: usize, b: &mut Builder) -> TransformerNet {
        let embed = b.dense("embed", nf, d);
        let cls = b.small("cls", &[1, 1, d]);
        let pos = b.small("pos", &[t + 1, d]);
        let blocks = (0..n_blocks)
            .map(|i| {
                let ln1 = b.layer_norm(&format!("block{}.ln1", i), d);
                let mut attn = [0; 8];
                for (j, name) in ["q", "k", "v", "o"].iter().enumerate() {
                    let lin = b.dense(&format!("block{}.attn.{}", i, name), d, d);
                    attn[2 * j] = lin.w;
                    attn[2 * j + 1] = lin.b;
                }
                let ln2 = b.layer_norm(&format!("block{}.ln2", i), d);
                let ff1 = b.dense(&format!("block{}.ff1", i), d, ff);
                let ff2 = b.dense(&format!("block{}.ff2", i), ff, d);
                EncoderBlock { ln1, attn, ln2, ff1, ff2 }
            })
            .collect();
        let ln = b.layer_norm("final_ln", d);
        let head = Head::new(b, d, head_hidden);
        TransformerNet { heads, embed, cls, pos, blocks, ln, head }
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let batch = f.tape.shape(x)[0];
        let tokens = self.embed.apply(f, x)?;
        let cls = f.tape.repeat(f.var(self.cls), batch)?;
        let h = f.tape.concat(&[cls, tokens], 1)?;
        let h = f.tape.add_bias(h, f.var(self.pos))?;
        let mut h = f.drop(h)?;
        for blk in &self.blocks {
            let a = blk.ln1.apply(f, h)?;
            let v = |i: usize| f.var(blk.attn[i]);
            let w = AttentionWeights { wq: v(0), bq: v(1), wk: v(2), bk: v(3), wv: v(4), bv: v(5), wo: v(6), bo: v(7) };
            let a = attention(f.tape, a, a, a, &w, self.heads)?;
            let a = f.drop(a)?;
            h = f.tape.add(h, a)?;
            let m = blk.ln2.apply(f, h)?;
            let m = blk.ff1.apply(f, m)?;
            let m = f.tape.gelu(m);
            let m = blk.ff2.apply(f, m)?;
            let m = f.drop(m)?;
            h = f.tape.add(h, m)?;
        }
        let h = self.ln.apply(f, h)?;
        let c = f.tape.select(h, 1, 0)?;
        self.head.apply(f, c)
    }
}

#[derive(Clone)]
pub(crate) struct InceptionBlock {
    branches: Vec<(Conv, BatchNorm)>,
    project: Conv,
}

#[derive(Clone)]
pub(crate) struct InceptionNet {
    stem: Conv,
    stem_norm: BatchNorm,
    blocks: Vec<InceptionBlock>,
    head: Head,
}

impl InceptionNet {
    fn build(c: usize, n_blocks: usize, kernels: &[usize], head_hidden: usize, b: &mut Builder) -> InceptionNet {
        let stem = b.conv("stem.conv", 1, c, (3, 3), Conv2dSpec::padded(1, 1), false);
        let stem_norm = b.batch_norm("stem.bn", c);
        let blocks = (0..n_blocks)
            .map(|i| {
                let branches = kernels
                    .iter()
                    .map(|&k| {
                        let conv = b.conv(&format!("block{}.conv{}", i, k), c, c, (k, k), Conv2dSpec::padded(k / 2, k / 2), false);
                        (conv, b.batch_norm(&format!("block{}.bn{}", i, k), c))
                    })
                    .collect();
                let project = b.conv(&format!("block{}.project", i), kernels.len() * c, c, (1, 1), Conv2dSpec::default(), true);
                InceptionBlock { branches, project }
            })
            .collect();
        let head = Head::new(b, c, head_hidden);
        InceptionNet { stem, stem_norm, blocks, head }
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let img = as_image(f, x)?;
        let h = self.stem.apply(f, img)?;
        let h = self.stem_norm.apply(f, h)?;
        let mut h = f.tape.relu(h);
        for blk in &self.blocks {
            let mut parts = Vec::with_capacity(blk.branches.len());
            for (conv, norm) in &blk.branches {
                let p = conv.apply(f, h)?;
                let p = norm.apply(f, p)?;
                parts.push(f.tape.relu(p));
            }
            let cat = f.tape.concat(&parts, 1)?;
            let p = blk.project.apply(f, cat)?;
            let s = f.tape.add(h, p)?;
            h = f.tape.relu(s);
        }
        let g = f.tape.global_avg_pool(h)?;
        let g = f.drop(g)?;
        self.head.apply(f, g)
    }
}

#[derive(Clone)]
pub(crate) struct ConvnextBlock {
    depthwise: Conv,
    ln: LayerNorm,
    expand: Dense,
    project: Dense,
}

#[derive(Clone)]
pub(crate) struct ConvnextNet {
    stem: Conv,
    stem_ln: LayerNorm,
    blocks: Vec<ConvnextBlock>,
    ln: LayerNorm,
    head: Head,
}

/// Layer norm over the channel axis of `[B, C, H, W]`.
fn channel_norm(f: &mut Fwd, ln: &LayerNorm, x: Var) -> Result<Var> {
    let t = f.tape.permute(x, &[0, 2, 3, 1])?;
    let t = ln.apply(f, t)?;
    f.tape.permute(t, &[0, 3, 1, 2])
}

impl ConvnextNet {
    fn build(c: usize, n_blocks: usize, k: usize, expansion: usize, head_hidden: usize, b: &mut Builder) -> ConvnextNet {
        let stem = b.conv("stem.conv", 1, c, (3, 3), Conv2dSpec::padded(1, 1), true);
        let stem_ln = b.layer_norm("stem.ln", c);
        let blocks = (0..n_blocks)
            .map(|i| ConvnextBlock {
                depthwise: b.conv(&format!("block{}.dw", i), c, c, (k, k), Conv2dSpec::padded(k / 2, k / 2).with_groups(c), true),
                ln: b.layer_norm(&format!("block{}.ln", i), c),
                expand: b.dense(&format!("block{}.expand", i), c, expansion * c),
                project: b.dense(&format!("block{}.project", i), expansion * c, c),
            })
            .collect();
        let ln = b.layer_norm("final_ln", c);
        let head = Head::new(b, c, head_hidden);
        ConvnextNet { stem, stem_ln, blocks, ln, head }
    }

    fn forward(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let img = as_image(f, x)?;
        let h = self.stem.apply(f, img)?;
        let mut h = channel_norm(f, &self.stem_ln, h)?;
        for blk in &self.blocks {
            let d = blk.depthwise.apply(f, h)?;
            let t = f.tape.permute(d, &[0, 2, 3, 1])?;
            let t = blk.ln.apply(f, t)?;
            let t = blk.expand.apply(f, t)?;
            let t = f.tape.gelu(t);
            let t = blk.project.apply(f, t)?;
            let t = f.tape.permute(t, &[0, 3, 1, 2])?;
            let t = f.drop(t)?;
            h = f.tape.add(h, t)?;
        }
        let g = f.tape.global_avg_pool(h)?;
        let g = self.ln.apply(f, g)?;
        let g = f.drop(g)?;
        self.head.apply(f, g)
    }
}
