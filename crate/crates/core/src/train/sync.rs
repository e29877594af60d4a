use crate::error::{shape_err, Result};

/// Gradients of every parameter tensor, in declaration order.
pub type GradientSet = Vec<Vec<f64>>;

/// Elementwise arithmetic mean of the workers' gradient sets, summed in
/// worker order so the result does not depend on thread timing.
pub fn sync_gradient_average(sets: &[GradientSet]) -> Result<GradientSet> {
    let first = sets.first().ok_or_else(|| shape_err!("no gradient sets to average"))?;
    for (k, s) in sets.iter().enumerate() {
        if s.len() != first.len() || s.iter().zip(first).any(|(a, b)| a.len() != b.len()) {
            return Err(shape_err!(
                "gradient set {} has shapes {:?}, expected {:?}",
                k,
                s.iter().map(Vec::len).collect::<Vec<_>>(),
                first.iter().map(Vec::len).collect::<Vec<_>>()
            ));
        }
    }
    let k = sets.len() as f64;
    Ok((0..first.len())
        .map(|t| {
            let mut acc = vec![0.0; first[t].len()];
            for s in sets {
                acc.iter_mut().zip(&s[t]).for_each(|(a, g)| *a += g);
            }
            acc.iter_mut().for_each(|a| *a /= k);
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_average_to_themselves() {
        let g = vec![vec![0.25, -1.5, 3.0], vec![0.5]];
        for k in 1..=5 {
            assert_eq!(sync_gradient_average(&vec![g.clone(); k]).unwrap(), g);
        }
    }

    #[test]
    fn opposite_sets_cancel() {
        let g = vec![vec![0.3, -2.0], vec![7.0, 1e-3, 4.0]];
        let neg: GradientSet = g.iter().map(|t| t.iter().map(|v| -v).collect()).collect();
        let avg = sync_gradient_average(&[g, neg]).unwrap();
        assert!(avg.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        assert!(sync_gradient_average(&[]).is_err());
        assert!(sync_gradient_average(&[vec![vec![1.0]], vec![vec![1.0, 2.0]]]).is_err());
        assert!(sync_gradient_average(&[vec![vec![1.0]], vec![vec![1.0], vec![2.0]]]).is_err());
    }
}
