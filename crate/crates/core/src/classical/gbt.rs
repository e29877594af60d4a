use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_rows, Binned, Criterion, LeafRule, Tree, TreeConfig, TreeData, TreeNode};
use super::{log_loss, logistic_loss, mix_seed, sigmoid, Matrix};
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// Fraction of rows drawn without replacement for each stage.
    pub subsample: f64,
    pub min_samples_leaf: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig { n_trees: 200, max_depth: 4, shrinkage: 0.1, subsample: 1.0, min_samples_leaf: 1 }
    }
}

/// `sigmoid(init + shrinkage · Σ tree(x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedHead {
    pub init: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
}

impl BoostedHead {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| self.shrinkage * t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

fn leaf_of(tree: &Tree, x: &[f64]) -> usize {
    *tree.path(x).last().unwrap()
}

/// Stagewise logistic boosting. Each stage fits a variance tree to the
/// residuals `y - p` with Newton leaf values `Σ(y - p) / Σ p(1 - p)`. A leaf
/// step that would raise the training loss of its rows is halved until it
/// does not. Returns the head and the training log-loss after each stage
/// (index 0 is the constant model).
pub fn fit_gbt(x: &Matrix, y: &[f64], sample_weight: &[f64], config: &BoostConfig, seed: u64) -> Result<(BoostedHead, Vec<f64>)> {
    if x.rows == 0 || y.len() != x.rows {
        return Err(config_err!("boosting needs a nonempty training set with one label per row"));
    }
    if !(config.shrinkage > 0.0) {
        return Err(config_err!("shrinkage must be positive, got {}", config.shrinkage));
    }
    if !(config.subsample > 0.0 && config.subsample <= 1.0) {
        return Err(config_err!("subsample must lie in (0, 1], got {}", config.subsample));
    }
    let total: f64 = sample_weight.iter().sum();
    let base = (y.iter().zip(sample_weight).map(|(a, w)| a * w).sum::<f64>() / total).clamp(1e-7, 1.0 - 1e-7);
    let init = (base / (1.0 - base)).ln();
    let mut margin = vec![init; x.rows];
    let binned = Binned::new(x);
    let tree_config = TreeConfig { max_depth: config.max_depth, min_samples_leaf: config.min_samples_leaf, criterion: Criterion::Variance, max_features: None };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB0057));
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut losses = vec![log_loss(&margin, y, sample_weight)];
    let n_sub = ((config.subsample * x.rows as f64).round() as usize).clamp(1, x.rows);
    for _ in 0..config.n_trees {
        let p: Vec<f64> = margin.iter().map(|m| sigmoid(*m)).collect();
        let resid: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
        let hess: Vec<f64> = p.iter().map(|q| q * (1.0 - q)).collect();
        let rows: Vec<u32> = if n_sub == x.rows {
            (0..x.rows as u32).collect()
        } else {
            let mut r: Vec<u32> = sample_indices(&mut rng, x.rows, n_sub).into_iter().map(|i| i as u32).collect();
            r.sort_unstable();
            r
        };
        let data = TreeData { binned: &binned, target: &resid, weight: sample_weight };
        let mut tree = fit_tree_rows::<ChaCha8Rng>(&data, rows, LeafRule::Newton(&hess), &tree_config, None);

        let leaf_rows: Vec<usize> = (0..x.rows).map(|i| leaf_of(&tree, x.row(i))).collect();
        for (id, node) in tree.nodes.iter_mut().enumerate() {
            let TreeNode::Leaf { value } = node else { continue };
            let members: Vec<usize> = (0..x.rows).filter(|&i| leaf_rows[i] == id).collect();
            let loss_at = |step: f64| -> f64 { members.iter().map(|&i| sample_weight[i] * logistic_loss(margin[i] + step, y[i])).sum() };
            let before = loss_at(0.0);
            let mut v = *value;
            let mut halvings = 0;
            while loss_at(config.shrinkage * v) > before && halvings < 60 {
                v *= 0.5;
                halvings += 1;
            }
            *value = if loss_at(config.shrinkage * v) > before { 0.0 } else { v };
        }
        for i in 0..x.rows {
            margin[i] += config.shrinkage * tree.predict(x.row(i));
        }
        losses.push(log_loss(&margin, y, sample_weight));
        trees.push(tree);
    }
    Ok((BoostedHead { init, shrinkage: config.shrinkage, trees }, losses))
}
