use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::HORIZON_WEEKS;
use crate::error::Result;
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, GradFragment, Mode, Tape, Tensor, Var};

use super::config::{ArchKind, ArchitectureConfig, Preset};
use super::model::{build_model, DeepModel};

/// Mean binary cross-entropy of a model on a fixed batch, as a function of
/// its parameters. Dropout is disabled so the loss is deterministic, and
/// parameters are jittered off their initial values so that no activation
/// sits exactly on a ReLU kink (zero biases make that common at init).
pub struct ModelFragment {
    model: DeepModel,
    x: Tensor,
    y: Vec<f64>,
    mode: Mode,
}

impl ModelFragment {
    pub fn new(config: &ArchitectureConfig, batch: usize, seed: u64, mode: Mode) -> Result<Self> {
        let mut model = build_model(&config.clone().with_dropout(0.0), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xda7a);
        for p in model.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
        }
        let n = batch * config.tau * config.n_features;
        let x = Tensor::new([batch, config.tau, config.n_features], (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        let y = (0..batch * HORIZON_WEEKS).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        Ok(ModelFragment { model, x, y, mode })
    }

    pub fn model(&self) -> &DeepModel {
        &self.model
    }
}

impl GradFragment for ModelFragment {
    fn params(&self) -> &[Tensor] {
        self.model.params()
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        self.model.params_mut()
    }

    fn param_name(&self, index: usize) -> String {
        self.model.param_names()[index].clone()
    }

    fn loss(&self, tape: &mut Tape) -> Result<(Var, Vec<Var>)> {
        let vars = self.model.bind(tape);
        let x = tape.constant(self.x.shape().to_vec(), self.x.data().to_vec())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.model.forward(tape, &vars, x, self.mode, &mut rng)?;
        let loss = tape.bce_with_logits(out.logits, &self.y, 1.0)?;
        Ok((loss, vars))
    }
}

/// Checks every desk-preset architecture on a 2-sample batch.
pub fn run_architecture_suite(seed: u64, config: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    ArchKind::SEQUENCE
        .into_iter()
        .chain([ArchKind::Linear])
        .map(|kind| {
            let mut frag = ModelFragment::new(&ArchitectureConfig::new(kind, Preset::Desk), 2, seed, Mode::Train)?;
            Ok((kind.name().to_string(), grad_check(&mut frag, config)?))
        })
        .collect()
}
