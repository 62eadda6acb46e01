//! Class-weighted logistic regression trained on resampled data.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{collect_grads, sigmoid, Activation, AdamConfig, AdamState, DenseLayer, Matrix, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::resampling::{adasyn, class_weights, random_oversample, random_undersample, smote, ClassWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampler {
    None,
    Undersample,
    Oversample,
    Smote,
    Adasyn,
}

impl Resampler {
    pub const ALL: [Resampler; 5] = [
        Resampler::None,
        Resampler::Undersample,
        Resampler::Oversample,
        Resampler::Smote,
        Resampler::Adasyn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Resampler::None => "none",
            Resampler::Undersample => "undersample",
            Resampler::Oversample => "oversample",
            Resampler::Smote => "smote",
            Resampler::Adasyn => "adasyn",
        }
    }

    /// Applies the resampler; SMOTE and ADASYN balance the classes using
    /// `k` minority neighbors.
    pub fn apply(self, ds: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
        match self {
            Resampler::None => Ok(ds.clone()),
            Resampler::Undersample => random_undersample(ds, seed),
            Resampler::Oversample => random_oversample(ds, seed),
            Resampler::Smote => smote(ds, k, None, seed),
            Resampler::Adasyn => adasyn(ds, k, None, seed),
        }
    }
}

impl fmt::Display for Resampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Resampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Resampler::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown resampler '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub resamplers: Vec<Resampler>,
    pub k_neighbors: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            resamplers: Resampler::ALL.to_vec(),
            k_neighbors: 5,
            epochs: 30,
            lr: 1e-2,
            batch_size: 128,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::Config("baseline.k_neighbors must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("baseline.batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("baseline.lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub layer: DenseLayer,
}

impl LogisticModel {
    pub fn zeros(d: usize) -> Self {
        LogisticModel {
            layer: DenseLayer::zeros(d, 1, Activation::Identity),
        }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.layer.apply(x)?.as_slice().iter().map(|&a| sigmoid(a)).collect())
    }
}

/// Mean of `w_i · (softplus(a_i) − a_i y_i)` over the batch.
fn weighted_bce_step(
    model: &mut LogisticModel,
    opt: &mut AdamState,
    x: &Matrix,
    labels: &[u8],
    weights: &ClassWeights,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.layer.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let logit = bound.forward(&mut tape, xv)?;
    let y = tape.leaf(Matrix::column(&labels.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()));
    let w = tape.leaf(Matrix::column(&weights.per_sample(labels)));
    let sp = tape.softplus(logit);
    let ay = tape.mul(logit, y)?;
    let bce = tape.sub(sp, ay)?;
    let weighted = tape.mul(bce, w)?;
    let loss = tape.mean(weighted);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("baseline loss".into()));
    }
    tape.backward(loss)?;
    let grads = collect_grads(&tape, &bound.params())?;
    opt.step(vec![&mut model.layer.weights, &mut model.layer.bias], &grads)?;
    Ok(value)
}

/// Trains from zero initialization with weights derived from the class
/// counts of `train` itself. Returns the model and the final epoch's mean
/// batch loss.
pub fn train_logistic(train: &Dataset, cfg: &BaselineConfig, seed: u64) -> Result<(LogisticModel, f64)> {
    cfg.validate()?;
    if train.n() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    let weights = class_weights(&train.labels)?;
    let mut model = LogisticModel::zeros(train.d());
    let mut opt = AdamState::new(
        [&model.layer.weights, &model.layer.bias],
        AdamConfig::with_lr(cfg.lr),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut last = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.features.select_rows(chunk);
            let labels: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            total += weighted_bce_step(&mut model, &mut opt, &x, &labels, &weights)?;
            batches += 1;
        }
        last = total / batches as f64;
    }
    Ok((model, last))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub resampler: Resampler,
    pub seed: u64,
    pub train_size: usize,
    pub train_class_counts: [usize; 2],
    pub final_train_loss: f64,
    pub model: LogisticModel,
}

pub fn run_baseline(train: &Dataset, resampler: Resampler, cfg: &BaselineConfig, seed: u64) -> Result<BaselineRun> {
    let resampled = resampler.apply(train, cfg.k_neighbors, seed)?;
    let (model, final_train_loss) = train_logistic(&resampled, cfg, seed)?;
    Ok(BaselineRun {
        resampler,
        seed,
        train_size: resampled.n(),
        train_class_counts: resampled.class_counts(),
        final_train_loss,
        model,
    })
}
