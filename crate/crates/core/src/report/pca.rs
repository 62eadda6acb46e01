use nalgebra::{DMatrix, SymmetricEigen};

use super::{Embedding2D, EmbeddingMethod};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Projection of the centered rows onto the top two eigenvectors of the
/// (population) covariance. Each axis is signed so its largest-magnitude
/// loading is positive.
pub fn pca2d(points: &Matrix, labels: &[u8]) -> Result<Embedding2D> {
    let (n, m) = points.shape();
    if n < 3 || m < 2 {
        return Err(Error::invalid(format!("PCA needs n ≥ 3 and m ≥ 2, got {n}x{m}")));
    }
    if labels.len() != n {
        return Err(Error::invalid("one label per point is required"));
    }
    let mut mean = vec![0.0; m];
    for r in 0..n {
        for (acc, v) in mean.iter_mut().zip(points.row(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let centered = DMatrix::from_fn(n, m, |r, c| points.get(r, c) - mean[c]);
    let cov = centered.transpose() * &centered / n as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if eig.eigenvalues[order[0]] <= 1e-14 * scale {
        return Err(Error::invalid("input has zero variance (rank 0)"));
    }

    let mut coords = Matrix::zeros(n, 2);
    let mut eigenvalues = Vec::with_capacity(2);
    for (axis, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i);
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for r in 0..n {
            let proj: f64 = centered.row(r).iter().zip(&v).map(|(a, b)| a * b).sum();
            coords.set(r, axis, proj);
        }
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(Embedding2D {
        coords,
        labels: labels.to_vec(),
        method: EmbeddingMethod::Pca,
        eigenvalues,
        kl_history: Vec::new(),
    })
}
