use crate::data::{column_moments, WindowSample};
use crate::error::{shape_err, Result};

/// Dense row-major design matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(shape_err!("{}x{} matrix from {} values", rows, cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("rows of unequal length"));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| f(*v)).collect() }
    }
}

/// Level-02 vectors of every sample, one row each.
pub fn level2_matrix(samples: &[WindowSample], n_features: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(samples.len() * 2 * n_features);
    for s in samples {
        data.extend(column_moments(&s.x, n_features)?);
    }
    Matrix::new(samples.len(), 2 * n_features, data)
}

/// Labels of week `w` (0-based) as 0/1 floats.
pub fn week_labels(samples: &[WindowSample], w: usize) -> Vec<f64> {
    samples.iter().map(|s| s.y[w] as f64).collect()
}
