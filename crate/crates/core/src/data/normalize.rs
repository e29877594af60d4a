use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, WindowSample};
use crate::error::{config_err, shape_err, Result};
use crate::io;

pub const SCALE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-feature standardization fitted on the training part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub features: Vec<FeatureScale>,
}

impl NormalizationStats {
    /// Mean and population std of every feature over all rows of all samples.
    pub fn fit(samples: &[WindowSample], names: &[String]) -> Result<Self> {
        let n = names.len();
        if samples.is_empty() {
            return Err(config_err!("normalization needs a nonempty training part"));
        }
        let mut sum = vec![0.0; n];
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        let mut count = 0usize;
        for s in samples {
            if s.x.len() % n != 0 {
                return Err(shape_err!("sample of {} values does not hold {} features per row", s.x.len(), n));
            }
            for row in s.x.chunks_exact(n) {
                for j in 0..n {
                    sum[j] += row[j];
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(config_err!("training samples hold no feature rows"));
        }
        // Constant columns keep their exact value and standardize to zero.
        let mean: Vec<f64> = (0..n).map(|j| if lo[j] == hi[j] { lo[j] } else { sum[j] / count as f64 }).collect();
        let mut ss = vec![0.0; n];
        for s in samples {
            for row in s.x.chunks_exact(n) {
                for j in 0..n {
                    ss[j] += (row[j] - mean[j]).powi(2);
                }
            }
        }
        Ok(NormalizationStats {
            features: names
                .iter()
                .enumerate()
                .map(|(j, name)| FeatureScale { name: name.clone(), mean: mean[j], std: (ss[j] / count as f64).sqrt() })
                .collect(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn apply(&self, x: &mut [f64]) {
        let n = self.features.len();
        for row in x.chunks_exact_mut(n) {
            for (v, f) in row.iter_mut().zip(&self.features) {
                *v = (*v - f.mean) / (f.std + SCALE_EPS);
            }
        }
    }

    pub fn apply_all(&self, samples: &mut [WindowSample]) {
        samples.iter_mut().for_each(|s| self.apply(&mut s.x));
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

/// Fits on `split.train` and standardizes every part with those statistics.
pub fn normalize_features(mut split: DatasetSplit, names: &[String]) -> Result<(NormalizationStats, DatasetSplit)> {
    let stats = NormalizationStats::fit(&split.train, names)?;
    stats.apply_all(&mut split.train);
    stats.apply_all(&mut split.validation);
    stats.apply_all(&mut split.test);
    Ok((stats, split))
}
