use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{config_err, Result};

pub const MAX_CANDIDATES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Gini impurity of binary labels.
    Gini,
    /// Squared error of real-valued targets.
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub criterion: Criterion,
    /// Features examined at each split; all when `None`.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 8, min_samples_leaf: 1, criterion: Criterion::Gini, max_features: None }
    }
}

/// One record of a flattened tree. Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root first.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![TreeNode::Leaf { value }] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Node indices visited by `x`, root to leaf.
    pub fn path(&self, x: &[f64]) -> Vec<usize> {
        let mut out = vec![0];
        let mut i = 0;
        while let TreeNode::Split { feature, threshold, left, right } = &self.nodes[i] {
            i = if x[*feature] <= *threshold { *left } else { *right };
            out.push(i);
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

/// Split candidates per feature: midpoints between consecutive distinct
/// values, thinned to at most [`MAX_CANDIDATES`] evenly spaced by rank.
pub fn candidate_thresholds(values: &mut [f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut uniq: Vec<f64> = Vec::new();
    for &v in values.iter() {
        if uniq.last() != Some(&v) {
            uniq.push(v);
        }
    }
    let gaps = uniq.len().saturating_sub(1);
    let mid = |k: usize| uniq[k] + (uniq[k + 1] - uniq[k]) / 2.0;
    if gaps <= MAX_CANDIDATES {
        return (0..gaps).map(mid).collect();
    }
    let mut out: Vec<f64> = (1..=MAX_CANDIDATES).map(|k| mid(k * gaps / (MAX_CANDIDATES + 1))).collect();
    out.dedup();
    out
}

/// Training data pre-binned against each feature's candidate thresholds.
pub struct Binned {
    pub thresholds: Vec<Vec<f64>>,
    /// `bins[f][i]`: number of thresholds of feature `f` strictly below row `i`'s value.
    bins: Vec<Vec<u16>>,
}

impl Binned {
    pub fn new(x: &Matrix) -> Self {
        let mut thresholds = Vec::with_capacity(x.cols);
        let mut bins = Vec::with_capacity(x.cols);
        for j in 0..x.cols {
            let mut col: Vec<f64> = (0..x.rows).map(|i| x.get(i, j)).collect();
            let thr = candidate_thresholds(&mut col);
            bins.push((0..x.rows).map(|i| thr.partition_point(|t| *t < x.get(i, j)) as u16).collect());
            thresholds.push(thr);
        }
        Binned { thresholds, bins }
    }

    pub fn n_features(&self) -> usize {
        self.thresholds.len()
    }
}

/// How leaf values are computed from the rows reaching them.
pub enum LeafRule<'a> {
    /// Mean target.
    Mean,
    /// `sum(target) / sum(hessian)`, a Newton step for boosting.
    Newton(&'a [f64]),
}

#[derive(Clone, Copy, Default)]
struct Stat {
    n: u32,
    w: f64,
    sum: f64,
    sum_sq: f64,
}

impl Stat {
    fn add(&mut self, t: f64, w: f64) {
        self.n += 1;
        self.w += w;
        self.sum += w * t;
        self.sum_sq += w * t * t;
    }

    fn merge(&mut self, o: &Stat) {
        self.n += o.n;
        self.w += o.w;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn sub(self, o: Stat) -> Stat {
        Stat { n: self.n - o.n, w: self.w - o.w, sum: self.sum - o.sum, sum_sq: self.sum_sq - o.sum_sq }
    }

    /// Node impurity times its weight; lower is better.
    fn cost(self, c: Criterion) -> f64 {
        if self.n == 0 || self.w <= 0.0 {
            return 0.0;
        }
        match c {
            // For 0/1 targets: w · (1 - p² - (1-p)²) = 2·pos·neg / w.
            Criterion::Gini => 2.0 * self.sum * (self.w - self.sum) / self.w,
            Criterion::Variance => self.sum_sq - self.sum * self.sum / self.w,
        }
    }
}

struct Builder<'a, R> {
    data: &'a Binned,
    target: &'a [f64],
    weight: &'a [f64],
    leaf: LeafRule<'a>,
    config: &'a TreeConfig,
    rng: Option<&'a mut R>,
    nodes: Vec<TreeNode>,
}

const MIN_GAIN: f64 = 1e-12;

impl<R: Rng> Builder<'_, R> {
    fn leaf_value(&self, rows: &[u32]) -> f64 {
        let s: f64 = rows.iter().map(|&i| self.weight[i as usize] * self.target[i as usize]).sum();
        let d: f64 = match self.leaf {
            LeafRule::Mean => rows.iter().map(|&i| self.weight[i as usize]).sum(),
            LeafRule::Newton(h) => rows.iter().map(|&i| self.weight[i as usize] * h[i as usize]).sum(),
        };
        if d > 1e-12 {
            s / d
        } else {
            0.0
        }
    }

    fn features(&mut self) -> Vec<usize> {
        let n = self.data.n_features();
        match (self.config.max_features, self.rng.as_mut()) {
            (Some(k), Some(rng)) if k < n => {
                let mut f = sample_indices(&mut **rng, n, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..n).collect(),
        }
    }

    fn best_split(&mut self, rows: &[u32]) -> Option<(usize, usize, f64)> {
        let mut total = Stat::default();
        rows.iter().for_each(|&i| total.add(self.target[i as usize], self.weight[i as usize]));
        let parent = total.cost(self.config.criterion);
        if parent <= MIN_GAIN {
            return None;
        }
        let min_leaf = self.config.min_samples_leaf.max(1) as u32;
        let mut best: Option<(usize, usize, f64)> = None;
        for f in self.features() {
            let thr = &self.data.thresholds[f];
            if thr.is_empty() {
                continue;
            }
            let mut hist = vec![Stat::default(); thr.len() + 1];
            let bins = &self.data.bins[f];
            for &i in rows {
                hist[bins[i as usize] as usize].add(self.target[i as usize], self.weight[i as usize]);
            }
            let mut left = Stat::default();
            for (k, h) in hist.iter().enumerate().take(thr.len()) {
                left.merge(h);
                let right = total.sub(left);
                if left.n < min_leaf || right.n < min_leaf {
                    continue;
                }
                let gain = parent - left.cost(self.config.criterion) - right.cost(self.config.criterion);
                if gain > MIN_GAIN && best.is_none_or(|b| gain > b.2) {
                    best = Some((f, k, gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: self.leaf_value(&rows) });
        if depth >= self.config.max_depth || rows.len() < 2 * self.config.min_samples_leaf.max(1) {
            return id;
        }
        let Some((f, k, _)) = self.best_split(&rows) else {
            return id;
        };
        let bins = &self.data.bins[f];
        let (l, r): (Vec<u32>, Vec<u32>) = rows.into_iter().partition(|&i| bins[i as usize] as usize <= k);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split { feature: f, threshold: self.data.thresholds[f][k], left, right };
        id
    }
}

/// Rows, per-row targets and weights a tree is grown on.
pub struct TreeData<'a> {
    pub binned: &'a Binned,
    pub target: &'a [f64],
    pub weight: &'a [f64],
}

/// Greedy CART over the given rows (duplicates allowed, as in a bootstrap).
/// Among equal gains the lowest feature index, then lowest threshold, wins.
pub fn fit_tree_rows<R: Rng>(data: &TreeData, rows: Vec<u32>, leaf: LeafRule, config: &TreeConfig, rng: Option<&mut R>) -> Tree {
    let mut b = Builder { data: data.binned, target: data.target, weight: data.weight, leaf, config, rng, nodes: Vec::new() };
    if rows.is_empty() {
        return Tree::leaf(0.0);
    }
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

/// Fits a tree to `target` over all rows of `x`: class frequency leaves under
/// Gini, mean leaves under variance.
pub fn fit_tree(x: &Matrix, target: &[f64], config: &TreeConfig) -> Result<Tree> {
    if x.rows == 0 || target.len() != x.rows {
        return Err(config_err!("tree fitting needs a nonempty training set with one target per row"));
    }
    let binned = Binned::new(x);
    let weight = vec![1.0; x.rows];
    let data = TreeData { binned: &binned, target, weight: &weight };
    Ok(fit_tree_rows::<rand_chacha::ChaCha8Rng>(&data, (0..x.rows as u32).collect(), LeafRule::Mean, config, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_are_midpoints_and_capped() {
        let mut v = vec![3.0, 1.0, 2.0, 2.0];
        assert_eq!(candidate_thresholds(&mut v), vec![1.5, 2.5]);
        let mut many: Vec<f64> = (0..5000).map(|i| i as f64).collect();
        let c = candidate_thresholds(&mut many);
        assert!(c.len() <= MAX_CANDIDATES && c.len() > 250);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn depth_zero_is_a_single_leaf() {
        let x = Matrix::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let t = fit_tree(&x, &[0.0, 0.0, 1.0, 1.0], &TreeConfig { max_depth: 0, ..Default::default() }).unwrap();
        assert_eq!(t.nodes, vec![TreeNode::Leaf { value: 0.5 }]);
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let x = Matrix::new(4, 2, vec![0.0, 5.0, 1.0, 4.0, 2.0, 3.0, 3.0, 2.0]).unwrap();
        let t = fit_tree(&x, &[1.0; 4], &TreeConfig::default()).unwrap();
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        let x = Matrix::new(4, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let t = fit_tree(&x, &[0.0, 0.0, 1.0, 1.0], &TreeConfig { max_depth: 1, ..Default::default() }).unwrap();
        assert!(matches!(t.nodes[0], TreeNode::Split { feature: 0, threshold, .. } if threshold == 1.5));
    }
}
