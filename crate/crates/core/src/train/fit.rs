use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classical::sigmoid;
use crate::data::{DatasetSplit, WindowSample, HORIZON_WEEKS};
use crate::deep::{batch_tensor, DeepModel};
use crate::error::{config_err, shape_err, Error, Result};
use crate::metrics::evaluate_scores;
use crate::tensor::{AdamConfig, AdamState, BatchMoments, Mode, Tape, Var};

use super::config::{LossKind, TrainConfig};
use super::history::{EpochRecord, TrainHistory};
use super::sync::{sync_gradient_average, GradientSet};

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn flat_targets(samples: &[&WindowSample]) -> Vec<f64> {
    samples.iter().flat_map(|s| s.y.iter().map(|&v| v as f64)).collect()
}

fn loss_var(tape: &mut Tape, logits: Var, targets: &[f64], config: &TrainConfig) -> Result<Var> {
    match config.loss {
        LossKind::Bce => tape.bce_with_logits(logits, targets, config.pos_weight.unwrap_or(1.0)),
        LossKind::SquaredError => tape.squared_error(logits, targets),
    }
}

struct Shard {
    n: usize,
    loss: f64,
    grads: GradientSet,
    moments: Vec<(usize, BatchMoments)>,
}

fn shard_gradients(model: &DeepModel, shard: &[&WindowSample], config: &TrainConfig, mode: Mode, seed: u64) -> Result<Shard> {
    let c = model.config();
    let x = batch_tensor(shard, c.tau, c.n_features)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let xv = tape.constant(x.shape().to_vec(), x.into_data())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = model.forward(&mut tape, &vars, xv, mode, &mut rng)?;
    let loss = loss_var(&mut tape, out.logits, &flat_targets(shard), config)?;
    let value = tape.value(loss)[0];
    tape.backward(loss)?;
    let grads = vars.iter().zip(model.params()).map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec)).collect();
    Ok(Shard { n: shard.len(), loss: value, grads, moments: out.moments })
}

/// Splits `n` items into `k` contiguous runs whose lengths differ by at most one.
fn shard_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    let k = k.min(n).max(1);
    (0..k).map(|i| (i * n / k, (i + 1) * n / k)).collect()
}

fn norm_summary(model: &DeepModel) -> String {
    let mut norms: Vec<(f64, &str)> = model.params().iter().zip(model.param_names()).map(|(p, n)| (p.l2_norm(), n.as_str())).collect();
    let bad = norms.iter().filter(|(v, _)| !v.is_finite()).count();
    norms.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Less));
    let top: Vec<String> = norms.iter().take(5).map(|(v, n)| format!("{}={:.4e}", n, v)).collect();
    format!("{} non-finite parameter tensors; largest norms: {}", bad, top.join(", "))
}

/// Owns a model and its optimizer state and applies synchronous
/// data-parallel steps: the batch is cut into one shard per worker, each
/// worker differentiates the mean loss of its shard on its own tape, and the
/// averaged gradient drives a single Adam update.
pub struct Trainer {
    model: DeepModel,
    adam: AdamState,
    config: TrainConfig,
    steps: u64,
}

impl Trainer {
    pub fn new(model: DeepModel, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params(), AdamConfig::with_lr(config.lr))?;
        Ok(Trainer { model, adam, config: config.clone(), steps: 0 })
    }

    pub fn model(&self) -> &DeepModel {
        &self.model
    }

    pub fn into_model(self) -> DeepModel {
        self.model
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn mode(&self) -> Mode {
        if self.config.frozen_norm {
            Mode::TrainFrozenNorm
        } else {
            Mode::Train
        }
    }

    /// One optimizer step on `batch`; returns the batch loss before the update.
    pub fn step(&mut self, batch: &[&WindowSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(shape_err!("empty training batch"));
        }
        let mode = self.mode();
        let step_seed = mix(self.config.seed, self.steps);
        let bounds = shard_bounds(batch.len(), self.config.workers);
        let shards: Vec<Shard> = if bounds.len() == 1 {
            vec![shard_gradients(&self.model, batch, &self.config, mode, mix(step_seed, 0))?]
        } else {
            let (model, config) = (&self.model, &self.config);
            std::thread::scope(|s| {
                let handles: Vec<_> = bounds
                    .iter()
                    .enumerate()
                    .map(|(k, &(a, b))| s.spawn(move || shard_gradients(model, &batch[a..b], config, mode, mix(step_seed, k as u64))))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect::<Result<Vec<_>>>()
            })?
        };

        let n = batch.len() as f64;
        let k = shards.len() as f64;
        let loss = shards.iter().map(|s| s.loss * s.n as f64).sum::<f64>() / n;
        let equal = shards.iter().all(|s| s.n == shards[0].n);
        // Unequal shards are reweighted so the average is the full-batch mean.
        let sets: Vec<GradientSet> = shards
            .iter()
            .map(|s| {
                if equal {
                    return s.grads.clone();
                }
                let w = s.n as f64 * k / n;
                s.grads.iter().map(|g| g.iter().map(|v| v * w).collect()).collect()
            })
            .collect();
        let grads = sync_gradient_average(&sets)?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("loss {} at step {}; {}", loss, self.steps, norm_summary(&self.model))));
        }
        self.adam.step(self.model.params_mut(), &grads)?;
        if let Some(first) = shards.first().filter(|s| !s.moments.is_empty()) {
            let moments: Vec<(usize, BatchMoments)> = first
                .moments
                .iter()
                .enumerate()
                .map(|(i, (slot, m))| {
                    let mut mean = vec![0.0; m.mean.len()];
                    let mut var = vec![0.0; m.var.len()];
                    for s in &shards {
                        let w = s.n as f64 / n;
                        let sm = &s.moments[i].1;
                        mean.iter_mut().zip(&sm.mean).for_each(|(a, v)| *a += w * v);
                        var.iter_mut().zip(&sm.var).for_each(|(a, v)| *a += w * v);
                    }
                    (*slot, BatchMoments { mean, var })
                })
                .collect();
            self.model.update_running(&moments);
        }
        self.steps += 1;
        Ok(loss)
    }
}

/// Model snapshot from the epoch with the highest mean validation AUC.
#[derive(Clone, Debug)]
pub struct BestModel {
    pub epoch: usize,
    pub mean_auc: f64,
    pub model: DeepModel,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DeepModel,
    pub best: Option<BestModel>,
    pub history: TrainHistory,
}

/// Validation loss and per-week AUC of `model`, both absent without data.
pub fn validation_metrics(model: &DeepModel, samples: &[WindowSample], config: &TrainConfig) -> Result<(Option<f64>, [Option<f64>; HORIZON_WEEKS])> {
    if samples.is_empty() {
        return Ok((None, [None; HORIZON_WEEKS]));
    }
    let logits = model.predict_logits(samples)?;
    let refs: Vec<&WindowSample> = samples.iter().collect();
    let mut tape = Tape::new();
    let z = tape.constant(vec![samples.len(), HORIZON_WEEKS], logits.iter().flatten().copied().collect())?;
    let loss = loss_var(&mut tape, z, &flat_targets(&refs), config)?;
    let probs: Vec<[f64; HORIZON_WEEKS]> = logits.iter().map(|z| z.map(sigmoid)).collect();
    let labels: Vec<[u8; HORIZON_WEEKS]> = samples.iter().map(|s| s.y).collect();
    let report = evaluate_scores(&probs, &labels)?;
    Ok((Some(tape.value(loss)[0]), std::array::from_fn(|w| report.auc(w + 1))))
}

pub fn train(model: DeepModel, split: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, &split.train, &split.validation, config, |_| {})
}

/// Mini-batch training with a fresh seeded shuffle every epoch. `on_epoch`
/// sees every `report_every`-th epoch and the last one.
pub fn train_with(
    model: DeepModel,
    train: &[WindowSample],
    validation: &[WindowSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(config_err!("the training part is empty"));
    }
    let (tau, nf) = (model.config().tau, model.config().n_features);
    if let Some(s) = train.iter().chain(validation).find(|s| s.x.len() != tau * nf) {
        return Err(shape_err!("sample of user {} has {} values, {} model expects {}x{}", s.user_id, s.x.len(), model.config().kind, tau, nf));
    }
    let merge_tail = model.uses_batch_norm() && !config.frozen_norm;
    let mut trainer = Trainer::new(model, config)?;
    let mut history = TrainHistory::default();
    let mut best: Option<BestModel> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed ^ 0x5eed, epoch as u64)));
        let mut batches: Vec<&[usize]> = order.chunks(config.batch).collect();
        // batch statistics of a single sample are degenerate
        if merge_tail && batches.len() > 1 && batches[batches.len() - 1].len() < 2 {
            batches.pop();
            let last = batches.len() - 1;
            batches[last] = &order[last * config.batch..];
        }
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&WindowSample> = idx.iter().map(|&i| &train[i]).collect();
            let loss = trainer.step(&batch).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("epoch {}, batch {}: {}", epoch, b + 1, m)),
                e => e,
            })?;
            total += loss * batch.len() as f64;
        }
        let (val_loss, auc) = validation_metrics(trainer.model(), validation, config)?;
        let record = EpochRecord { epoch, train_loss: total / train.len() as f64, val_loss, auc, seconds: started.elapsed().as_secs_f64() };

        let present: Vec<f64> = auc.iter().flatten().copied().collect();
        if !present.is_empty() {
            let mean_auc = present.iter().sum::<f64>() / present.len() as f64;
            if best.as_ref().is_none_or(|b| mean_auc > b.mean_auc) {
                best = Some(BestModel { epoch, mean_auc, model: trainer.model().clone() });
            }
        }
        let stop = matches!((config.stop_at_auc, auc[0]), (Some(t), Some(a)) if a >= t);
        let last = epoch == config.epochs || stop;
        if last || (config.report_every > 0 && epoch % config.report_every == 0) {
            on_epoch(&record);
        }
        history.epochs.push(record);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome { model: trainer.into_model(), best, history })
}
