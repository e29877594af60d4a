use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{fit_random_forest, forest_predict, ForestConfig};
use super::gbt::{fit_gbt, BoostConfig, BoostedHead};
use super::logreg::{fit_logreg, LogRegConfig, LogRegHead};
use super::tree::Tree;
use super::{level2_matrix, mix_seed, week_labels};
use crate::data::{WindowSample, HORIZON_WEEKS};
use crate::error::{config_err, shape_err, Error, Result};
use crate::io;
use crate::metrics::Scorer;

pub const CLASSICAL_FORMAT: &str = "churnforge-classical";
pub const CLASSICAL_VERSION: u32 = 1;
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalKind {
    Lr,
    Rf,
    Gbt,
}

impl ClassicalKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logreg" => Some(ClassicalKind::Lr),
            "rf" | "random_forest" => Some(ClassicalKind::Rf),
            "gbt" => Some(ClassicalKind::Gbt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassicalKind::Lr => "lr",
            ClassicalKind::Rf => "rf",
            ClassicalKind::Gbt => "gbt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub kind: ClassicalKind,
    #[serde(default)]
    pub logreg: LogRegConfig,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub boost: BoostConfig,
    /// Weight positives by the negative:positive ratio of each week.
    #[serde(default)]
    pub class_weight: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ClassicalConfig {
    pub fn new(kind: ClassicalKind) -> Self {
        ClassicalConfig { kind, logreg: LogRegConfig::default(), forest: ForestConfig::default(), boost: BoostConfig::default(), class_weight: false, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    LogReg(LogRegHead),
    Forest { trees: Vec<Tree> },
    Boosted(BoostedHead),
}

impl Head {
    pub fn predict(&self, g: &[f64]) -> f64 {
        match self {
            Head::LogReg(h) => h.predict(g),
            Head::Forest { trees } => forest_predict(trees, g),
            Head::Boosted(h) => h.predict(g),
        }
    }
}

/// Four independent per-week classifiers over Level-02 vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalModel {
    pub format: String,
    pub version: u32,
    pub kind: ClassicalKind,
    /// Daily features per window row; the model consumes twice as many inputs.
    pub n_features: usize,
    pub config: ClassicalConfig,
    pub heads: Vec<Head>,
}

fn class_weights(y: &[f64], on: bool) -> Vec<f64> {
    if !on {
        return vec![1.0; y.len()];
    }
    let pos = y.iter().filter(|v| **v == 1.0).count() as f64;
    let ratio = (y.len() as f64 - pos) / pos.max(1.0);
    y.iter().map(|v| if *v == 1.0 { ratio } else { 1.0 }).collect()
}

/// Fits one head per week on the Level-02 vectors of `train`.
pub fn fit_classical(train: &[WindowSample], n_features: usize, config: &ClassicalConfig) -> Result<ClassicalModel> {
    if train.is_empty() {
        return Err(config_err!("classical training set is empty"));
    }
    let x = level2_matrix(train, n_features)?;
    let heads = (0..HORIZON_WEEKS)
        .into_par_iter()
        .map(|w| {
            let y = week_labels(train, w);
            let pos = y.iter().filter(|v| **v == 1.0).count();
            if pos == 0 || pos == y.len() {
                return Err(Error::DegenerateLabels(format!("week {} training labels are all {}", w + 1, if pos == 0 { 0 } else { 1 })));
            }
            let sw = class_weights(&y, config.class_weight);
            let seed = mix_seed(config.seed, w as u64);
            Ok(match config.kind {
                ClassicalKind::Lr => Head::LogReg(fit_logreg(&x, &y, &sw, &config.logreg)?),
                ClassicalKind::Rf => Head::Forest { trees: fit_random_forest(&x, &y, &sw, &config.forest, seed)? },
                ClassicalKind::Gbt => Head::Boosted(fit_gbt(&x, &y, &sw, &config.boost, seed)?.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassicalModel { format: CLASSICAL_FORMAT.into(), version: CLASSICAL_VERSION, kind: config.kind, n_features, config: config.clone(), heads })
}

/// Four weekly probabilities for one Level-02 vector, clamped away from 0 and 1.
pub fn predict_classical(model: &ClassicalModel, g: &[f64]) -> Result<[f64; HORIZON_WEEKS]> {
    if g.len() != 2 * model.n_features {
        return Err(shape_err!("model expects {} Level-02 inputs, got {}", 2 * model.n_features, g.len()));
    }
    let mut out = [0.0; HORIZON_WEEKS];
    for (o, h) in out.iter_mut().zip(&model.heads) {
        let p = h.predict(g);
        *o = if p.is_nan() { 0.5 } else { p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP) };
    }
    Ok(out)
}

impl ClassicalModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ClassicalModel = io::read_json(path)?;
        if m.format != CLASSICAL_FORMAT || m.version != CLASSICAL_VERSION || m.heads.len() != HORIZON_WEEKS {
            return Err(Error::Format(format!("{}: not a version {} classical model", path.display(), CLASSICAL_VERSION)));
        }
        Ok(m)
    }
}

impl Scorer for ClassicalModel {
    fn predict(&self, samples: &[WindowSample]) -> Result<Vec<[f64; HORIZON_WEEKS]>> {
        let x = level2_matrix(samples, self.n_features)?;
        (0..x.rows).into_par_iter().map(|i| predict_classical(self, x.row(i))).collect()
    }
}
