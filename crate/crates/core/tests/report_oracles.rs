use imb_dpgm::autodiff::Matrix;


use imb_dpgm::report::{
    pca2d, tsne_exact, TsneParams,
    read_sweep_csv, silhouette, stratified_subsample, threshold_sweep, uniform_grid,
    write_sweep_csv,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Cyclic Jacobi rotations on a symmetric matrix. Returns eigenvalues and
/// column eigenvectors.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn gaussian(n: usize, m: usize, scale: &[f64], seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let e: f64 = StandardNormal.sample(&mut rng);
            out.set(i, j, scale[j] * e + j as f64);
        }
    }
    out
}

#[test]
fn pca_matches_jacobi_oracle() {
    let (n, m) = (10, 5);
    let x = gaussian(n, m, &[3.0, 2.0, 1.5, 0.7, 0.2], 11);
    let mean: Vec<f64> = (0..m).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
    let cov: Vec<Vec<f64>> = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| (0..n).map(|i| (x.get(i, a) - mean[a]) * (x.get(i, b) - mean[b])).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));

    let emb = pca2d(&x, &[0; 10]).unwrap();
    for (axis, &k) in order.iter().take(2).enumerate() {
        assert!((emb.eigenvalues[axis] - vals[k]).abs() < 1e-9);
        let mut v: Vec<f64> = (0..m).map(|r| vecs[r][k]).collect();
        let pivot = (0..m).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        for i in 0..n {
            let proj: f64 = (0..m).map(|j| (x.get(i, j) - mean[j]) * v[j]).sum();
            assert!((emb.coords.get(i, axis) - proj).abs() < 1e-9, "axis {axis} row {i}");
        }
    }
    assert!((emb.captured_variance() - (vals[order[0]] + vals[order[1]])).abs() < 1e-9);
    for axis in 0..2 {
        let var = (0..n).map(|i| emb.coords.get(i, axis).powi(2)).sum::<f64>() / n as f64;
        assert!((var - emb.eigenvalues[axis]).abs() < 1e-9);
    }
}

#[test]
fn pca_commutes_with_row_permutation() {
    let x = gaussian(30, 4, &[2.0, 1.0, 0.5, 0.1], 3);
    let labels: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
    let perm: Vec<usize> = (0..30).map(|i| (i * 7) % 30).collect();
    let a = pca2d(&x, &labels).unwrap();
    let b = pca2d(&x.select_rows(&perm), &perm.iter().map(|&i| labels[i]).collect::<Vec<_>>()).unwrap();
    for (r, &p) in perm.iter().enumerate() {
        for c in 0..2 {
            assert!((b.coords.get(r, c) - a.coords.get(p, c)).abs() < 1e-9);
        }
        assert_eq!(b.labels[r], a.labels[p]);
    }
}

fn two_clusters(per: usize, gap: f64, seed: u64) -> (Matrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Matrix::zeros(2 * per, 5);
    let mut y = vec![0u8; 2 * per];
    for i in 0..2 * per {
        let shift = if i < per { 0.0 } else { gap };
        y[i] = u8::from(i >= per);
        for j in 0..5 {
            let e: f64 = StandardNormal.sample(&mut rng);
            x.set(i, j, e + if j == 0 { shift } else { 0.0 });
        }
    }
    (x, y)
}

#[test]
fn tsne_separates_distant_clusters() {
    let (x, y) = two_clusters(10, 10.0, 5);
    let params = TsneParams {
        perplexity: 5.0,
        ..TsneParams::default()
    };
    let emb = tsne_exact(&x, &y, &params).unwrap();
    let s = silhouette(&emb.coords, &y).unwrap();
    assert!(s > 0.5, "silhouette {s}");
    assert!(emb.coords.as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn tsne_objective_decreases_after_exaggeration() {
    let (x, y) = two_clusters(20, 4.0, 6);
    let params = TsneParams {
        perplexity: 8.0,
        iterations: 600,
        ..TsneParams::default()
    };
    let emb = tsne_exact(&x, &y, &params).unwrap();
    let kl = &emb.kl_history;
    assert_eq!(kl.len(), 600);
    let start = params.exaggeration_iters;
    let early = kl[start..start + 100].iter().sum::<f64>() / 100.0;
    let late = kl[kl.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(late < early, "late {late} early {early}");
    assert!(kl.iter().all(|v| *v >= -1e-12));
}

#[test]
fn tsne_is_seed_deterministic() {
    let (x, y) = two_clusters(8, 3.0, 7);
    let params = TsneParams {
        perplexity: 4.0,
        iterations: 200,
        ..TsneParams::default()
    };
    let a = tsne_exact(&x, &y, &params).unwrap();
    let b = tsne_exact(&x, &y, &params).unwrap();
    assert_eq!(a.coords, b.coords);
    let c = tsne_exact(&x, &y, &TsneParams { seed: 1, ..params }).unwrap();
    assert_ne!(a.coords, c.coords);
}

fn sweep_data() -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let y: Vec<u8> = (0..100).map(|i| u8::from(i % 7 == 0)).collect();
    let s = y
        .iter()
        .map(|&l| (0.3 * f64::from(l) + 0.7 * rng.random::<f64>()).min(1.0))
        .collect();
    (s, y)
}

#[test]
fn sweep_matches_direct_counts() {
    let (s, y) = sweep_data();
    let grid = uniform_grid(100);
    let rows = threshold_sweep(&s, &y, &grid).unwrap();
    assert_eq!(rows.len(), 101);
    for row in &rows {
        let t = row.threshold;
        let tp = s.iter().zip(&y).filter(|(v, l)| **v >= t && **l == 1).count() as f64;
        let pp = s.iter().filter(|v| **v >= t).count() as f64;
        let pos = y.iter().filter(|l| **l == 1).count() as f64;
        let p = if pp > 0.0 { tp / pp } else { 0.0 };
        let r = tp / pos;
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        assert!((row.precision - p).abs() < 1e-15);
        assert!((row.recall - r).abs() < 1e-15);
        assert!((row.f1 - f).abs() < 1e-15);
    }
    assert_eq!(rows[0].recall, 1.0);
    assert!(rows.windows(2).all(|w| w[1].recall <= w[0].recall));
}

#[test]
fn sweep_csv_round_trip() {
    let (s, y) = sweep_data();
    let rows = threshold_sweep(&s, &y, &uniform_grid(20)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&rows, &path).unwrap();
    assert_eq!(read_sweep_csv(&path).unwrap(), rows);
    assert!(threshold_sweep(&s, &y, &[]).is_err());
    assert!(threshold_sweep(&s, &y, &[1.5]).is_err());
}

#[test]
fn subsample_keeps_class_shares() {
    let labels: Vec<u8> = (0..1000).map(|i| u8::from(i % 50 == 0)).collect();
    let idx = stratified_subsample(&labels, 100, 4).unwrap();
    assert_eq!(idx.len(), 100);
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(idx.iter().filter(|&&i| labels[i] == 1).count(), 2);
    assert_eq!(idx, stratified_subsample(&labels, 100, 4).unwrap());
    let tiny = stratified_subsample(&labels, 10, 4).unwrap();
    assert!(tiny.iter().any(|&i| labels[i] == 1));
}
