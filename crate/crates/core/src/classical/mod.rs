//! Per-week classifiers over Level-02 window statistics: logistic
//! regression, random forest and gradient-boosted trees on a shared CART core.

mod forest;
mod gbt;
mod logreg;
mod matrix;
mod model;
pub mod tree;

pub use forest::{fit_random_forest, forest_predict, FeatureSubsample, ForestConfig};
pub use gbt::{fit_gbt, BoostConfig, BoostedHead};
pub use logreg::{fit_logreg, LogRegConfig, LogRegHead};
pub use matrix::{level2_matrix, week_labels, Matrix};
pub use model::{fit_classical, predict_classical, ClassicalConfig, ClassicalKind, ClassicalModel, Head, CLASSICAL_FORMAT, CLASSICAL_VERSION, PROB_CLAMP};
pub use tree::{fit_tree, Criterion, Tree, TreeConfig, TreeNode};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^m) - y·m`, the cross-entropy of a logit `m` against label `y`.
pub fn logistic_loss(margin: f64, y: f64) -> f64 {
    margin.max(0.0) + (-margin.abs()).exp().ln_1p() - y * margin
}

/// Weighted mean [`logistic_loss`].
pub fn log_loss(margins: &[f64], y: &[f64], weight: &[f64]) -> f64 {
    let total: f64 = weight.iter().sum();
    margins.iter().zip(y).zip(weight).map(|((m, t), w)| w * logistic_loss(*m, *t)).sum::<f64>() / total
}

pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
