use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_rows, Binned, Criterion, LeafRule, Tree, TreeConfig, TreeData};
use super::{mix_seed, Matrix};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubsample {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            FeatureSubsample::Sqrt => ((n as f64).sqrt().round() as usize).clamp(1, n.max(1)),
            FeatureSubsample::All => n,
            FeatureSubsample::Count(k) => k.clamp(1, n.max(1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 200, max_depth: 8, min_samples_leaf: 1, feature_subsample: FeatureSubsample::Sqrt, bootstrap: true }
    }
}

/// Gini trees on bootstrap resamples; each leaf holds its positive-class
/// frequency and the forest averages them.
pub fn fit_random_forest(x: &Matrix, y: &[f64], sample_weight: &[f64], config: &ForestConfig, seed: u64) -> Result<Vec<Tree>> {
    if x.rows == 0 || y.len() != x.rows {
        return Err(config_err!("random forest needs a nonempty training set with one label per row"));
    }
    if config.n_trees == 0 {
        return Err(config_err!("random forest needs at least one tree"));
    }
    let binned = Binned::new(x);
    let data = TreeData { binned: &binned, target: y, weight: sample_weight };
    let tree_config = TreeConfig {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        criterion: Criterion::Gini,
        max_features: Some(config.feature_subsample.resolve(x.cols)),
    };
    Ok((0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, t as u64));
            let rows: Vec<u32> =
                if config.bootstrap { (0..x.rows).map(|_| rng.random_range(0..x.rows as u32)).collect() } else { (0..x.rows as u32).collect() };
            fit_tree_rows(&data, rows, LeafRule::Mean, &tree_config, Some(&mut rng))
        })
        .collect())
}

pub fn forest_predict(trees: &[Tree], x: &[f64]) -> f64 {
    trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64
}
