use serde::{Deserialize, Serialize};

use super::{sigmoid, Matrix};
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// L2 penalty on the weights (not the intercept).
    pub lambda: f64,
    /// Gradient-descent step; `None` uses the inverse smoothness constant.
    pub lr: Option<f64>,
    pub max_iter: usize,
    /// Stop once the gradient norm falls to this value.
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig { lambda: 1e-4, lr: None, max_iter: 5000, tol: 1e-6 }
    }
}

/// Logistic regression on standardized inputs `(x - center) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegHead {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogRegHead {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.weights).zip(self.center.iter().zip(&self.scale)).map(|((v, w), (c, s))| w * (v - c) / s).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

fn standardize(x: &Matrix) -> (Vec<f64>, Vec<f64>, Matrix) {
    let n = x.rows as f64;
    let mut center = vec![0.0; x.cols];
    let mut scale = vec![0.0; x.cols];
    for j in 0..x.cols {
        center[j] = (0..x.rows).map(|i| x.get(i, j)).sum::<f64>() / n;
        let var = (0..x.rows).map(|i| (x.get(i, j) - center[j]).powi(2)).sum::<f64>() / n;
        scale[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let mut z = x.clone();
    for i in 0..x.rows {
        for j in 0..x.cols {
            z.data[i * x.cols + j] = (x.get(i, j) - center[j]) / scale[j];
        }
    }
    (center, scale, z)
}

/// Largest eigenvalue of `[1 z]ᵀ W [1 z] / sum(W)` by power iteration.
fn curvature_bound(z: &Matrix, w: &[f64], total: f64) -> f64 {
    let d = z.cols + 1;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 1.0;
    for _ in 0..100 {
        let mut out = vec![0.0; d];
        for i in 0..z.rows {
            let row = z.row(i);
            let dot = v[0] + row.iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>();
            let s = w[i] * dot / total;
            out[0] += s;
            out[1..].iter_mut().zip(row).for_each(|(o, r)| *o += s * r);
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        v = out.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Minimizes weighted mean cross-entropy plus `lambda/2 · |w|²` by
/// full-batch gradient descent.
pub fn fit_logreg(x: &Matrix, y: &[f64], sample_weight: &[f64], config: &LogRegConfig) -> Result<LogRegHead> {
    if x.rows == 0 || y.len() != x.rows || sample_weight.len() != x.rows {
        return Err(config_err!("logistic regression needs one label and weight per row"));
    }
    if config.lambda < 0.0 || config.lr.is_some_and(|lr| !(lr > 0.0)) {
        return Err(config_err!("invalid logistic regression config {:?}", config));
    }
    let (center, scale, z) = standardize(x);
    let total: f64 = sample_weight.iter().sum();
    let lr = config.lr.unwrap_or_else(|| 1.0 / (0.25 * curvature_bound(&z, sample_weight, total) + config.lambda));
    let mut w = vec![0.0; x.cols];
    let mut b = 0.0;
    let mut grad_w = vec![0.0; x.cols];
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < config.max_iter {
        grad_w.iter_mut().zip(&w).for_each(|(g, wi)| *g = config.lambda * wi);
        let mut grad_b = 0.0;
        for i in 0..z.rows {
            let row = z.row(i);
            let p = sigmoid(b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
            let r = sample_weight[i] * (p - y[i]) / total;
            grad_b += r;
            grad_w.iter_mut().zip(row).for_each(|(g, v)| *g += r * v);
        }
        grad_norm = (grad_b * grad_b + grad_w.iter().map(|g| g * g).sum::<f64>()).sqrt();
        if grad_norm <= config.tol {
            break;
        }
        b -= lr * grad_b;
        w.iter_mut().zip(&grad_w).for_each(|(wi, g)| *wi -= lr * g);
        iterations += 1;
    }
    Ok(LogRegHead { weights: w, intercept: b, center, scale, iterations, grad_norm })
}
