use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::weighted_elbo_loss;
use super::{row_chunks, ModelConfig, VariationalClassifier};
use crate::adversary::{standard_normal, AdvConfig, LatentAdversary};
use crate::autodiff::{collect_grads, AdamConfig, AdamState, Matrix, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::resampling::ClassWeights;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const EPS_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Loss curve sampled during training; iterations strictly increase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn push(&mut self, rec: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.iteration <= last.iteration {
                return Err(Error::Contract(format!(
                    "trace iteration {} does not follow {}",
                    rec.iteration, last.iteration
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

/// State at the point training was aborted.
#[derive(Debug, Clone)]
pub struct DivergedRun {
    pub iteration: usize,
    /// Parameters from before the failing update.
    pub last_good: VariationalClassifier,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: VariationalClassifier,
    pub trace: TrainTrace,
    pub adversary: Option<LatentAdversary>,
}

/// Weighted negative ELBO over a whole dataset with `z = μ(x)`.
pub fn evaluation_loss(model: &VariationalClassifier, ds: &Dataset, weights: &ClassWeights) -> Result<f64> {
    let mut total = 0.0;
    for chunk in row_chunks(ds.n()) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x = tape.leaf(ds.features.select_rows(&chunk));
        let labels: Vec<u8> = chunk.iter().map(|&i| ds.labels[i]).collect();
        let w = weights.per_sample(&labels);
        let eps = [Matrix::zeros(chunk.len(), model.latent_dim())];
        let terms = weighted_elbo_loss(&mut tape, &bound, x, &labels, &w, &eps, model.config.beta_rec)?;
        total += tape.value(terms.weighted.expect("weighted")).sum();
    }
    Ok(total / ds.n() as f64)
}

/// One optimizer step on a batch. With an adversary, first runs its GAN
/// updates on the batch's minority codes, then adds generated minority codes
/// to the classifier loss as `w_minority · BCE` terms (divided by the batch
/// size like every other term). Returns the batch loss before the update.
pub fn augmented_training_step(
    model: &mut VariationalClassifier,
    optimizer: &mut AdamState,
    x: &Matrix,
    labels: &[u8],
    weights: &ClassWeights,
    eps: &[Matrix],
    adversary: Option<&mut LatentAdversary>,
) -> Result<f64> {
    let mut aux_latents = None;
    if let Some(adv) = adversary {
        let minority: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == weights.minority_label)
            .collect();
        let real = if minority.is_empty() {
            Matrix::zeros(0, model.latent_dim())
        } else {
            model.encode(&x.select_rows(&minority))?.0
        };
        adv.adversary_updates(&real)?;
        aux_latents = adv.auxiliary_latents()?;
    }

    let sample_w = weights.per_sample(labels);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let terms = weighted_elbo_loss(&mut tape, &bound, xv, labels, &sample_w, eps, model.config.beta_rec)?;
    let mut total = terms.loss;
    if let Some(zg) = aux_latents {
        let zv = tape.leaf(zg);
        let logit = bound.head.forward(&mut tape, zv)?;
        let sp = tape.softplus(logit);
        let bce = if weights.minority_label == 1 {
            tape.sub(sp, logit)?
        } else {
            sp
        };
        let s = tape.sum(bce);
        let aux = tape.scale(s, weights.w_minority / labels.len() as f64);
        total = tape.add(total, aux)?;
    }
    let value = tape.value(total).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {value}")));
    }
    tape.backward(total)?;
    let grads = collect_grads(&tape, &bound.params())?;
    optimizer.step(model.params_mut(), &grads)?;
    if !model.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(value)
}

/// Trains on `train` with seeded minibatch Adam, tracing losses on `train`
/// and `val`.
pub fn fit(train: &Dataset, val: &Dataset, config: &ModelConfig) -> Result<FitOutput> {
    fit_with_adversary(train, val, config, None)
}

pub fn fit_with_adversary(
    train: &Dataset,
    val: &Dataset,
    config: &ModelConfig,
    adversary: Option<&AdvConfig>,
) -> Result<FitOutput> {
    config.validate()?;
    if val.d() != train.d() {
        return Err(Error::shape(
            "fit",
            format!("train has {} features, validation {}", train.d(), val.d()),
        ));
    }
    let weights = config.class_weights(&train.labels)?;

    let rng_for = |stream| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(stream);
        r
    };
    let mut model = VariationalClassifier::init(train.d(), config, &mut rng_for(INIT_STREAM))?;
    let mut opt = AdamState::new(model.params(), AdamConfig::with_lr(config.lr));
    let mut shuffle_rng = rng_for(SHUFFLE_STREAM);
    let mut eps_rng = rng_for(EPS_STREAM);
    let mut adv = match adversary {
        Some(a) if a.enabled => Some(LatentAdversary::new(
            config.latent_dim,
            a,
            config.lr,
            config.seed,
        )?),
        _ => None,
    };

    let mut trace = TrainTrace::default();
    if config.epochs == 0 {
        return Ok(FitOutput {
            model,
            trace,
            adversary: adv,
        });
    }

    let record = |model: &VariationalClassifier, iteration: usize, trace: &mut TrainTrace| -> Result<()> {
        let rec = TraceRecord {
            iteration,
            train_loss: evaluation_loss(model, train, &weights)?,
            test_loss: evaluation_loss(model, val, &weights)?,
        };
        trace.push(rec)
    };
    record(&model, 0, &mut trace)?;

    let m = config.latent_dim;
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut iteration = 0usize;
    for _epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let x = train.features.select_rows(batch);
            let labels: Vec<u8> = batch.iter().map(|&i| train.labels[i]).collect();
            let eps: Vec<Matrix> = (0..config.mc_samples_train)
                .map(|_| standard_normal(batch.len(), m, &mut eps_rng))
                .collect();
            let snapshot = model.clone();
            let step = augmented_training_step(
                &mut model,
                &mut opt,
                &x,
                &labels,
                &weights,
                &eps,
                adv.as_mut(),
            );
            match step {
                Ok(_) => {}
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged(Box::new(DivergedRun {
                        iteration: iteration + 1,
                        last_good: snapshot,
                        trace,
                    })))
                }
                Err(e) => return Err(e),
            }
            iteration += 1;
            if config.eval_every > 0 && iteration.is_multiple_of(config.eval_every) {
                record(&model, iteration, &mut trace)?;
            }
        }
        if config.eval_every == 0 {
            record(&model, iteration, &mut trace)?;
        }
    }
    if trace.records.last().map(|r| r.iteration) != Some(iteration) {
        record(&model, iteration, &mut trace)?;
    }
    Ok(FitOutput {
        model,
        trace,
        adversary: adv,
    })
}
