use anim3d_numerics::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CoreError, Result};

/// Codes projected onto their first two principal axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Fraction of total variance captured by each axis.
    pub explained: [f64; 2],
    /// Unit principal axes, each flipped so its largest-magnitude loading is positive.
    pub axes: [Vec<f64>; 2],
}

/// Mean-centered PCA of `[N, D]` codes to two components. Missing components
/// (D < 2 or rank-deficient input) come out as zeros.
pub fn project_codes_2d(codes: &Tensor) -> Result<Projection> {
    let s = codes.shape();
    if s.len() != 2 {
        return Err(CoreError::arg(format!("codes must be [N, D], got {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    if n < 3 {
        return Err(CoreError::arg(format!("projection needs at least 3 codes, got {n}")));
    }
    let x = DMatrix::from_row_slice(n, d, codes.data());
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut axes = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        if total <= 0.0 || lambda <= total * 1e-12 {
            continue;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let big = axis
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if big < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes[slot] = axis;
        explained[slot] = lambda / total;
    }
    let points = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let dot = |a: &[f64]| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [dot(&axes[0]), dot(&axes[1])]
        })
        .collect();
    Ok(Projection { points, explained, axes })
}
