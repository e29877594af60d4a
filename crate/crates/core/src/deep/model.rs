use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classical::sigmoid;
use crate::data::{WindowSample, HORIZON_WEEKS};
use crate::error::{shape_err, Result};
use crate::metrics::Scorer;
use crate::tensor::{BatchMoments, Mode, Tape, Tensor, Var};

use super::config::ArchitectureConfig;
use super::layers::{Builder, Fwd, RunningStats};
use super::nets::Net;

/// Momentum of the running batch-normalization estimates.
pub const NORM_MOMENTUM: f64 = 0.1;

/// Samples per inference chunk.
const INFER_CHUNK: usize = 256;

#[derive(Clone)]
pub struct DeepModel {
    config: ArchitectureConfig,
    params: Vec<Tensor>,
    names: Vec<String>,
    running: Vec<RunningStats>,
    net: Net,
}

impl std::fmt::Debug for DeepModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeepModel").field("config", &self.config).field("parameters", &self.count_parameters()).finish()
    }
}

/// Result of one recorded forward pass.
pub struct Forward {
    pub logits: Var,
    /// Batch moments of every batch-norm layer, when training with batch statistics.
    pub moments: Vec<(usize, BatchMoments)>,
}

/// Builds and initializes a model; identical seeds give identical parameters.
pub fn build_model(config: &ArchitectureConfig, seed: u64) -> Result<DeepModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new(&mut rng);
    let net = Net::build(config, &mut b)?;
    let running = b.norms.iter().map(|&c| RunningStats::new(c)).collect();
    Ok(DeepModel { config: config.clone(), params: b.params, names: b.names, running, net })
}

/// Stacks window samples into a `[B, tau, n_features]` tensor.
pub fn batch_tensor(samples: &[&WindowSample], tau: usize, n_features: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * tau * n_features);
    for s in samples {
        if s.x.len() != tau * n_features {
            return Err(shape_err!("sample of user {} has {} values, model expects {}x{}", s.user_id, s.x.len(), tau, n_features));
        }
        data.extend_from_slice(&s.x);
    }
    Tensor::new([samples.len(), tau, n_features], data)
}

impl DeepModel {
    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn running(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    pub fn uses_batch_norm(&self) -> bool {
        !self.running.is_empty()
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`, in declaration order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p)).collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != self.config.tau || shape[2] != self.config.n_features {
            return Err(shape_err!("{} model expects [B, {}, {}] input, got {:?}", self.config.kind, self.config.tau, self.config.n_features, shape));
        }
        Ok(())
    }

    /// Records a forward pass of `x` (`[B, tau, n_features]`) using parameters
    /// already bound as `vars`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Forward> {
        self.check_input(tape.shape(x))?;
        if vars.len() != self.params.len() {
            return Err(shape_err!("{} bound variables for {} parameters", vars.len(), self.params.len()));
        }
        let mut f = Fwd { tape, vars, running: &self.running, mode, dropout: self.config.dropout, rng, moments: Vec::new() };
        let logits = self.net.forward(&mut f, x)?;
        Ok(Forward { logits, moments: f.moments })
    }

    /// Folds batch moments into the running estimates.
    pub fn update_running(&mut self, moments: &[(usize, BatchMoments)]) {
        for (slot, m) in moments {
            let r = &mut self.running[*slot];
            for (rm, bm) in r.mean.iter_mut().zip(&m.mean) {
                *rm = (1.0 - NORM_MOMENTUM) * *rm + NORM_MOMENTUM * bm;
            }
            for (rv, bv) in r.var.iter_mut().zip(&m.var) {
                *rv = (1.0 - NORM_MOMENTUM) * *rv + NORM_MOMENTUM * bv;
            }
        }
    }

    /// Inference-mode logits `[B, 4]`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape)?;
        let xv = tape.constant(x.shape().to_vec(), x.data().to_vec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &vars, xv, Mode::Infer, &mut rng)?;
        Ok(tape.to_tensor(out.logits))
    }

    fn bind_constants(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params.iter().map(|p| tape.constant(p.shape().to_vec(), p.data().to_vec())).collect()
    }

    /// Inference-mode output of the first convolution, for conv kinds.
    pub fn first_conv_output(&self, x: &Tensor) -> Result<Option<Tensor>> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape)?;
        let xv = tape.constant(x.shape().to_vec(), x.data().to_vec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Fwd { tape: &mut tape, vars: &vars, running: &self.running, mode: Mode::Infer, dropout: 0.0, rng: &mut rng, moments: Vec::new() };
        let out = self.net.first_conv(&mut f, xv)?;
        Ok(out.map(|v| tape.to_tensor(v)))
    }

    /// Inference-mode logits for each sample.
    pub fn predict_logits(&self, samples: &[WindowSample]) -> Result<Vec<[f64; HORIZON_WEEKS]>> {
        let (tau, nf) = (self.config.tau, self.config.n_features);
        let chunks: Vec<Vec<[f64; HORIZON_WEEKS]>> = samples
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let refs: Vec<&WindowSample> = chunk.iter().collect();
                let logits = self.logits(&batch_tensor(&refs, tau, nf)?)?;
                Ok(logits.data().chunks(HORIZON_WEEKS).map(|row| std::array::from_fn(|w| row[w])).collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Weekly churn probabilities `sigmoid(logits)` for each sample.
    pub fn predict_proba(&self, samples: &[WindowSample]) -> Result<Vec<[f64; HORIZON_WEEKS]>> {
        Ok(self.predict_logits(samples)?.into_iter().map(|z| z.map(sigmoid)).collect())
    }
}

impl Scorer for DeepModel {
    fn predict(&self, samples: &[WindowSample]) -> Result<Vec<[f64; 4]>> {
        self.predict_proba(samples)
    }
}
