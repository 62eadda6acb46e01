use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

use super::BoundModel;

/// `KL(N(μ, diag e^logvar) ‖ N(0, I)) = ½ Σ (μ² + e^logvar − 1 − logvar)`.
pub fn kl_diag_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Row-wise KL for `B×m` posterior parameters, returned as `B×1`.
pub fn kl_diag_gaussian_rows(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let m = tape.value(mu).cols();
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(logvar);
    let a = tape.add(mu2, var)?;
    let b = tape.add_scalar(a, -1.0);
    let elem = tape.sub(b, logvar)?;
    let ones = tape.leaf(Matrix::filled(m, 1, 1.0));
    let rows = tape.matmul(elem, ones)?;
    Ok(tape.scale(rows, 0.5))
}

/// Reparameterized draw `z = μ + exp(logvar / 2) ⊙ ε`.
pub fn sample_latent(tape: &mut Tape, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

pub fn sample_latent_values(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(Error::shape("sample_latent", "μ, logvar and ε differ in length"));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Pieces of the negated ELBO for one batch.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    /// `B×1` unweighted per-sample loss: BCE + KL (+ β_rec·reconstruction).
    pub per_sample: Var,
    /// `B×1` per-sample loss times its class weight; `None` when unweighted.
    pub weighted: Option<Var>,
    /// Scalar batch mean.
    pub loss: Var,
}

fn per_sample_terms(
    tape: &mut Tape,
    model: &BoundModel,
    x: Var,
    labels: &[u8],
    eps: &[Matrix],
    beta_rec: f64,
) -> Result<Var> {
    let b = tape.value(x).rows();
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if labels.len() != b {
        return Err(Error::shape("elbo", format!("{} labels for {b} rows", labels.len())));
    }
    if eps.is_empty() {
        return Err(Error::invalid("at least one ε draw is required"));
    }
    let (mu, logvar) = model.encode(tape, x)?;
    let m = tape.value(mu).cols();
    let y = tape.leaf(Matrix::column(
        &labels.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
    ));
    let s = eps.len() as f64;
    let use_rec = beta_rec > 0.0 && model.decoder.is_some();

    let mut bce_acc: Option<Var> = None;
    let mut rec_acc: Option<Var> = None;
    for e in eps {
        if e.shape() != (b, m) {
            return Err(Error::shape(
                "elbo",
                format!("ε is {}x{}, expected {b}x{m}", e.rows(), e.cols()),
            ));
        }
        let ev = tape.leaf(e.clone());
        let z = sample_latent(tape, mu, logvar, ev)?;
        let logit = model.head.forward(tape, z)?;
        // −log p(y|z) = softplus(a) − a·y
        let sp = tape.softplus(logit);
        let ay = tape.mul(logit, y)?;
        let bce = tape.sub(sp, ay)?;
        bce_acc = Some(match bce_acc {
            Some(acc) => tape.add(acc, bce)?,
            None => bce,
        });
        if use_rec {
            let dec = model.decoder.as_ref().expect("checked");
            let xhat = dec.forward(tape, z)?;
            let diff = tape.sub(x, xhat)?;
            let sq = tape.mul(diff, diff)?;
            let d = model.input_dim;
            let ones = tape.leaf(Matrix::filled(d, 1, 1.0));
            let row = tape.matmul(sq, ones)?;
            let row = tape.scale(row, 1.0 / d as f64);
            rec_acc = Some(match rec_acc {
                Some(acc) => tape.add(acc, row)?,
                None => row,
            });
        }
    }
    let bce = tape.scale(bce_acc.expect("eps nonempty"), 1.0 / s);
    let kl = kl_diag_gaussian_rows(tape, mu, logvar)?;
    let mut total = tape.add(bce, kl)?;
    if let Some(rec) = rec_acc {
        let rec = tape.scale(rec, beta_rec / s);
        total = tape.add(total, rec)?;
    }
    Ok(total)
}

/// Class-weighted negative ELBO, mean-reduced over the batch.
///
/// `weights` holds one multiplier per row; `eps` holds one `B×m` standard
/// normal draw per Monte-Carlo sample.
pub fn weighted_elbo_loss(
    tape: &mut Tape,
    model: &BoundModel,
    x: Var,
    labels: &[u8],
    weights: &[f64],
    eps: &[Matrix],
    beta_rec: f64,
) -> Result<ElboTerms> {
    if weights.len() != labels.len() {
        return Err(Error::shape(
            "elbo",
            format!("{} weights for {} labels", weights.len(), labels.len()),
        ));
    }
    let per_sample = per_sample_terms(tape, model, x, labels, eps, beta_rec)?;
    let w = tape.leaf(Matrix::column(weights));
    let weighted = tape.mul(per_sample, w)?;
    let loss = tape.mean(weighted);
    Ok(ElboTerms {
        per_sample,
        weighted: Some(weighted),
        loss,
    })
}

/// Negative ELBO with every sample weighted 1.
pub fn elbo_loss_unweighted(
    tape: &mut Tape,
    model: &BoundModel,
    x: Var,
    labels: &[u8],
    eps: &[Matrix],
    beta_rec: f64,
) -> Result<ElboTerms> {
    let per_sample = per_sample_terms(tape, model, x, labels, eps, beta_rec)?;
    let loss = tape.mean(per_sample);
    Ok(ElboTerms {
        per_sample,
        weighted: None,
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::model::{ModelConfig, VariationalClassifier};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn kl_worked_values() {
        assert_eq!(kl_diag_gaussian(&[0.0], &[0.0]), 0.0);
        assert!((kl_diag_gaussian(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        let v = kl_diag_gaussian(&[0.0], &[4f64.ln()]);
        assert!((v - 0.5 * (4.0 - 1.0 - 4f64.ln())).abs() < 1e-15);
        assert!((v - 0.806_853).abs() < 1e-6);
    }

    #[test]
    fn kl_tape_matches_scalar_and_grad_checks() {
        let mu = Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.1]]).unwrap();
        let lv = Matrix::from_rows(&[vec![-0.5, 0.7], vec![0.0, -2.0]]).unwrap();
        let mut t = Tape::new();
        let (a, b) = (t.leaf(mu.clone()), t.leaf(lv.clone()));
        let k = kl_diag_gaussian_rows(&mut t, a, b).unwrap();
        for r in 0..2 {
            let direct = kl_diag_gaussian(mu.row(r), lv.row(r));
            assert!((t.value(k).get(r, 0) - direct).abs() < 1e-14);
        }
        let err = grad_check(
            |t, v| {
                let k = kl_diag_gaussian_rows(t, v[0], v[1])?;
                Ok(t.sum(k))
            },
            &[mu, lv],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn reparameterization_identities() {
        assert_eq!(sample_latent_values(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(sample_latent_values(&[1.0, 2.0], &[0.0, 0.0], &[1.0, -1.0]).unwrap(), vec![2.0, 1.0]);
        assert!(sample_latent_values(&[1.0], &[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn reparameterized_mean_converges() {
        let mu = [0.7, -1.3];
        let lv = [0.4, -0.8];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let e: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            let z = sample_latent_values(&mu, &lv, &e).unwrap();
            acc[0] += z[0];
            acc[1] += z[1];
        }
        for j in 0..2 {
            assert!((acc[j] / n as f64 - mu[j]).abs() < 0.02);
        }
    }

    #[test]
    fn single_sample_worked_value() {
        // zero model: μ = 0, logvar = 0, p(y=1|z) = 0.5, so loss = ln 2
        let model = VariationalClassifier::zeros(3, &ModelConfig::default()).unwrap();
        let mut t = Tape::new();
        let bound = model.bind(&mut t);
        let x = t.leaf(Matrix::row_vector(&[0.2, 0.4, -1.0]));
        let terms = weighted_elbo_loss(&mut t, &bound, x, &[1], &[1.0], &[Matrix::zeros(1, 8)], 0.0).unwrap();
        assert!((t.value(terms.loss).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_rejected() {
        let model = VariationalClassifier::zeros(2, &ModelConfig::default()).unwrap();
        let mut t = Tape::new();
        let bound = model.bind(&mut t);
        let x = t.leaf(Matrix::zeros(0, 2));
        assert!(weighted_elbo_loss(&mut t, &bound, x, &[], &[], &[Matrix::zeros(0, 8)], 0.0).is_err());
    }
}
