//! Exact O(n²) t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Embedding2D, EmbeddingMethod};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const TSNE_MAX_POINTS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_switch_iter: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 4.0,
            exaggeration_iters: 100,
            momentum_switch_iter: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

const ENTROPY_TOL: f64 = 1e-5;
const MAX_SEARCH_STEPS: usize = 200;

fn squared_distances(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Conditional affinities of row `i` for precision `beta`, with their
/// Shannon entropy in nats.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let shifted = d - dmin;
        let p = (-beta * shifted).exp();
        *o = p;
        sum += p;
        weighted += shifted * p;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * weighted / sum
}

/// Symmetric joint affinities `P = (P_{j|i} + P_{i|j}) / 2n` from squared
/// distances. Each conditional's bandwidth is found by bisection so its
/// entropy matches `ln(perplexity)`.
pub fn joint_probabilities(sq_dist: &Matrix, perplexity: f64) -> Result<Matrix> {
    let n = sq_dist.rows();
    if n < 2 || sq_dist.cols() != n {
        return Err(Error::invalid("need a square distance matrix with n ≥ 2"));
    }
    if !(perplexity > 0.0) {
        return Err(Error::invalid("perplexity must be positive"));
    }
    let target = perplexity.ln();
    let mut cond = Matrix::zeros(n, n);
    let mut row = vec![0.0; n];
    for i in 0..n {
        let dist = sq_dist.row(i);
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..MAX_SEARCH_STEPS {
            let h = conditional_row(dist, i, beta, &mut row);
            let diff = h - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        conditional_row(dist, i, beta, &mut row);
        for (j, &p) in row.iter().enumerate() {
            cond.set(i, j, p);
        }
    }
    let mut p = Matrix::zeros(n, n);
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p.set(i, j, (cond.get(i, j) + cond.get(j, i)) / denom);
            }
        }
    }
    Ok(p)
}

/// Perplexity actually achieved by row `i` of a conditional distribution.
pub fn row_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

fn kl_divergence(p: &Matrix, q: &Matrix) -> f64 {
    p.as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv.max(1e-300)).ln())
        .sum()
}

/// Exact t-SNE to two dimensions. The returned embedding records
/// `KL(P‖Q)` (unexaggerated) after every iteration.
pub fn tsne_exact(points: &Matrix, labels: &[u8], params: &TsneParams) -> Result<Embedding2D> {
    let n = points.rows();
    if !(3..=TSNE_MAX_POINTS).contains(&n) {
        return Err(Error::invalid(format!(
            "exact t-SNE supports 3..={TSNE_MAX_POINTS} points, got {n}; subsample first"
        )));
    }
    if labels.len() != n {
        return Err(Error::invalid("one label per point is required"));
    }
    if !(params.perplexity < n as f64 / 3.0) {
        return Err(Error::invalid(format!(
            "perplexity {} must be below n/3 = {:.3}",
            params.perplexity,
            n as f64 / 3.0
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    // tiny jitter separates exact duplicates
    let mut jittered = points.clone();
    for v in jittered.as_mut_slice() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += 1e-12 * e;
    }
    let p = joint_probabilities(&squared_distances(&jittered), params.perplexity)?;

    let init = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = Matrix::zeros(n, n);
    let mut q = Matrix::zeros(n, n);
    let mut kl_history = Vec::with_capacity(params.iterations);

    for iter in 0..params.iterations {
        let exaggeration = if iter < params.exaggeration_iters {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < params.momentum_switch_iter {
            params.initial_momentum
        } else {
            params.final_momentum
        };

        let mut sum_num = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num.set(i, j, v);
                num.set(j, i, v);
                sum_num += 2.0 * v;
            }
        }
        for i in 0..n {
            for j in 0..n {
                q.set(i, j, if i == j { 0.0 } else { num.get(i, j) / sum_num });
            }
        }

        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mult = (exaggeration * p.get(i, j) - q.get(i, j)) * num.get(i, j);
                grad[0] += mult * (y[i][0] - y[j][0]);
                grad[1] += mult * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                let g = 4.0 * grad[k];
                gains[i][k] = if (g > 0.0) != (velocity[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                velocity[i][k] = momentum * velocity[i][k] - params.learning_rate * gains[i][k] * g;
            }
        }
        let mut centre = [0.0f64; 2];
        for (yi, vi) in y.iter_mut().zip(&velocity) {
            yi[0] += vi[0];
            yi[1] += vi[1];
            centre[0] += yi[0];
            centre[1] += yi[1];
        }
        for yi in y.iter_mut() {
            yi[0] -= centre[0] / n as f64;
            yi[1] -= centre[1] / n as f64;
        }
        kl_history.push(kl_divergence(&p, &q));
    }

    let coords = Matrix::from_vec(n, 2, y.iter().flat_map(|v| *v).collect())?;
    if !coords.is_finite() {
        return Err(Error::NonFinite("t-SNE coordinates".into()));
    }
    Ok(Embedding2D {
        coords,
        labels: labels.to_vec(),
        method: EmbeddingMethod::Tsne,
        eigenvalues: Vec::new(),
        kl_history,
    })
}
