use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{linear, xavier_uniform, BatchMoments, Conv2dSpec, Mode, NormStats, Tape, Tensor, Var};

/// Registers parameter tensors in declaration order during construction.
pub(crate) struct Builder<'r> {
    pub params: Vec<Tensor>,
    pub names: Vec<String>,
    pub norms: Vec<usize>,
    pub rng: &'r mut ChaCha8Rng,
}

impl<'r> Builder<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Builder { params: Vec::new(), names: Vec::new(), norms: Vec::new(), rng }
    }

    pub fn tensor(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.params.push(t);
        self.names.push(name.into());
        self.params.len() - 1
    }

    pub fn xavier(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize) -> usize {
        let t = xavier_uniform(shape, fan_in, fan_out, self.rng);
        self.tensor(name, t)
    }

    pub fn small(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-0.02..0.02)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("generated length matches shape").with_grad();
        self.tensor(name, t)
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> usize {
        self.tensor(name, Tensor::full(shape.to_vec(), value).with_grad())
    }

    pub fn dense(&mut self, name: &str, d_in: usize, d_out: usize) -> Dense {
        let w = self.xavier(format!("{}.weight", name), &[d_in, d_out], d_in, d_out);
        let b = self.filled(format!("{}.bias", name), &[d_out], 0.0);
        Dense { w, b }
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: (usize, usize), spec: Conv2dSpec, bias: bool) -> Conv {
        let g = spec.groups;
        let area = kernel.0 * kernel.1;
        let w = self.xavier(format!("{}.weight", name), &[c_out, c_in / g, kernel.0, kernel.1], c_in / g * area, c_out / g * area);
        let b = bias.then(|| self.filled(format!("{}.bias", name), &[c_out], 0.0));
        Conv { w, b, spec }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNorm {
        let gamma = self.filled(format!("{}.gamma", name), &[d], 1.0);
        let beta = self.filled(format!("{}.beta", name), &[d], 0.0);
        LayerNorm { gamma, beta }
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> BatchNorm {
        let gamma = self.filled(format!("{}.gamma", name), &[c], 1.0);
        let beta = self.filled(format!("{}.beta", name), &[c], 0.0);
        self.norms.push(c);
        BatchNorm { gamma, beta, slot: self.norms.len() - 1 }
    }
}

/// Running estimates of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

/// State threaded through one forward pass.
pub(crate) struct Fwd<'a> {
    pub tape: &'a mut Tape,
    pub vars: &'a [Var],
    pub running: &'a [RunningStats],
    pub mode: Mode,
    pub dropout: f64,
    pub rng: &'a mut ChaCha8Rng,
    pub moments: Vec<(usize, BatchMoments)>,
}

impl Fwd<'_> {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn drop(&mut self, x: Var) -> Result<Var> {
        self.tape.dropout(x, self.dropout, self.mode, self.rng)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn apply(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let (w, b) = (f.var(self.w), f.var(self.b));
        linear(f.tape, x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    w: usize,
    b: Option<usize>,
    spec: Conv2dSpec,
}

impl Conv {
    pub fn apply(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let (w, b) = (f.var(self.w), self.b.map(|b| f.var(b)));
        f.tape.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    pub fn apply(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let (g, b) = (f.var(self.gamma), f.var(self.beta));
        f.tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BatchNorm {
    gamma: usize,
    beta: usize,
    slot: usize,
}

impl BatchNorm {
    pub fn apply(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let (g, b) = (f.var(self.gamma), f.var(self.beta));
        if f.mode.batch_statistics() {
            let (y, m) = f.tape.batch_norm(x, g, b, NormStats::Batch)?;
            f.moments.extend(m.map(|m| (self.slot, m)));
            Ok(y)
        } else {
            let r = &f.running[self.slot];
            Ok(f.tape.batch_norm(x, g, b, NormStats::Running { mean: &r.mean, var: &r.var })?.0)
        }
    }
}

/// Two dense layers: hidden with ReLU and dropout, then the four week logits.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Head {
    hidden: Dense,
    out: Dense,
}

impl Head {
    pub fn new(b: &mut Builder, d_in: usize, hidden: usize) -> Self {
        Head { hidden: b.dense("head.hidden", d_in, hidden), out: b.dense("head.out", hidden, crate::data::HORIZON_WEEKS) }
    }

    pub fn apply(&self, f: &mut Fwd, x: Var) -> Result<Var> {
        let h = self.hidden.apply(f, x)?;
        let h = f.tape.relu(h);
        let h = f.drop(h)?;
        self.out.apply(f, h)
    }
}
