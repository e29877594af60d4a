use super::{Day, WindowSample};
use crate::error::{shape_err, Result};

/// Per-window column statistics `(mu_1, sigma_1, ..., mu_N, sigma_N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Level2Vector {
    pub user_id: u64,
    pub anchor_date: Day,
    pub g: Vec<f64>,
}

/// Column means and population standard deviations of a row-major
/// `rows × n_features` matrix, interleaved.
pub fn column_moments(x: &[f64], n_features: usize) -> Result<Vec<f64>> {
    if n_features == 0 || x.is_empty() || x.len() % n_features != 0 {
        return Err(shape_err!("{} values do not form rows of {} features", x.len(), n_features));
    }
    let rows = (x.len() / n_features) as f64;
    let mut mean = vec![0.0; n_features];
    for row in x.chunks_exact(n_features) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut m2 = vec![0.0; n_features];
    for row in x.chunks_exact(n_features) {
        for j in 0..n_features {
            let d = row[j] - mean[j];
            m2[j] += d * d;
        }
    }
    Ok(mean.iter().zip(&m2).flat_map(|(&m, &s)| [m, (s.max(0.0) / rows).sqrt()]).collect())
}

pub fn aggregate_level02(sample: &WindowSample, n_features: usize) -> Result<Level2Vector> {
    Ok(Level2Vector { user_id: sample.user_id, anchor_date: sample.anchor_date, g: column_moments(&sample.x, n_features)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column() {
        let g = column_moments(&[5.0; 30], 1).unwrap();
        assert_eq!(g, vec![5.0, 0.0]);
    }

    #[test]
    fn ragged_input_rejected() {
        assert!(column_moments(&[1.0; 7], 2).is_err());
    }
}
