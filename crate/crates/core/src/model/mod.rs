//! Variational latent-variable classifier.
//!
//! An encoder maps `x` to a diagonal Gaussian `q(z|x) = N(μ(x), diag σ²(x))`,
//! a classifier head maps `z` to the logit of `p(y=1|z)`, and the prior is
//! `p(z) = N(0, I)`. Training minimizes the class-weighted negative ELBO
//!
//! ```text
//! (1/B) Σ_i w(y_i) [ −E_q log p(y_i|z) + KL(q(z|x_i) ‖ p(z)) + β_rec ‖x_i − x̂_i‖² / d ]
//! ```
//!
//! where the reconstruction term is only present when `beta_rec > 0` (the
//! decoder is built only in that case). Prediction uses `z = μ(x)`.

mod checkpoint;
mod loss;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, BoundLayer, BoundMlp, DenseLayer, Matrix, Mlp, Tape, Var};
use crate::error::{Error, Result};
use crate::resampling::ClassWeights;

pub use checkpoint::{Checkpoint, LayerRecord};
pub use loss::{
    elbo_loss_unweighted, kl_diag_gaussian, kl_diag_gaussian_rows, sample_latent,
    sample_latent_values, weighted_elbo_loss, ElboTerms,
};
pub use train::{
    augmented_training_step, evaluation_loss, fit, fit_with_adversary, DivergedRun, FitOutput,
    TraceRecord, TrainTrace,
};

/// Bounds applied to the encoder's log-variance output.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Both classes weigh 1.
    None,
    /// Minority weight `N_major / N_minor`.
    Ratio,
    /// Minority weight taken from `custom_weight`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Encoder trunk widths; the decoder mirrors them.
    pub hidden_sizes: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub mc_samples_train: usize,
    pub beta_rec: f64,
    pub weight_mode: WeightMode,
    pub custom_weight: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Trace interval in iterations; 0 records once per epoch.
    pub eval_every: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 8,
            hidden_sizes: vec![64, 32],
            head_hidden: vec![16],
            mc_samples_train: 1,
            beta_rec: 0.0,
            weight_mode: WeightMode::Ratio,
            custom_weight: None,
            lr: 1e-3,
            epochs: 30,
            batch_size: 128,
            seed: 42,
            eval_every: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.hidden_sizes.iter().chain(&self.head_hidden).any(|&h| h == 0) {
            return bad("hidden layer widths must be positive");
        }
        if self.mc_samples_train == 0 {
            return bad("mc_samples_train must be at least 1");
        }
        if !(self.beta_rec >= 0.0 && self.beta_rec.is_finite()) {
            return bad("beta_rec must be a finite nonnegative number");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.weight_mode == WeightMode::Custom && self.custom_weight.is_none() {
            return bad("weight_mode 'custom' requires custom_weight");
        }
        Ok(())
    }

    pub fn has_decoder(&self) -> bool {
        self.beta_rec > 0.0
    }

    /// Class weights for the given training labels under `weight_mode`.
    pub fn class_weights(&self, labels: &[u8]) -> Result<ClassWeights> {
        match self.weight_mode {
            WeightMode::None => ClassWeights::uniform(labels),
            WeightMode::Ratio => crate::resampling::class_weights(labels),
            WeightMode::Custom => ClassWeights::custom(
                labels,
                self.custom_weight
                    .ok_or_else(|| Error::Config("custom_weight missing".into()))?,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalClassifier {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub encoder: Mlp,
    pub mu_layer: DenseLayer,
    pub logvar_layer: DenseLayer,
    pub head: Mlp,
    pub decoder: Option<Mlp>,
}

fn sizes(first: usize, mid: &[usize], last: usize) -> Vec<usize> {
    let mut s = vec![first];
    s.extend_from_slice(mid);
    s.push(last);
    s
}

impl VariationalClassifier {
    /// Seeded random initialization.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        let m = config.latent_dim;
        let mut trunk = vec![input_dim];
        trunk.extend_from_slice(&config.hidden_sizes);
        let encoder = Mlp::init(&trunk, Activation::Relu, Activation::Relu, rng);
        let h = *trunk.last().unwrap();
        let mu_layer = DenseLayer::init(h, m, Activation::Identity, rng);
        // unit posterior variance at the start; e^logvar is too steep for a
        // random init
        let logvar_layer = DenseLayer::zeros(h, m, Activation::Identity);
        let head = Mlp::init(
            &sizes(m, &config.head_hidden, 1),
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        let decoder = config.has_decoder().then(|| {
            let mid: Vec<usize> = config.hidden_sizes.iter().rev().copied().collect();
            Mlp::init(&sizes(m, &mid, input_dim), Activation::Relu, Activation::Identity, rng)
        });
        Ok(VariationalClassifier {
            config: config.clone(),
            input_dim,
            encoder,
            mu_layer,
            logvar_layer,
            head,
            decoder,
        })
    }

    /// All parameters zero: `μ = 0`, `logvar = 0`, `p(y=1|z) = 0.5`.
    pub fn zeros(input_dim: usize, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let m = config.latent_dim;
        let mut trunk = vec![input_dim];
        trunk.extend_from_slice(&config.hidden_sizes);
        let h = *trunk.last().unwrap();
        let mid: Vec<usize> = config.hidden_sizes.iter().rev().copied().collect();
        Ok(VariationalClassifier {
            config: config.clone(),
            input_dim,
            encoder: Mlp::zeros(&trunk, Activation::Relu, Activation::Relu),
            mu_layer: DenseLayer::zeros(h, m, Activation::Identity),
            logvar_layer: DenseLayer::zeros(h, m, Activation::Identity),
            head: Mlp::zeros(&sizes(m, &config.head_hidden, 1), Activation::Relu, Activation::Identity),
            decoder: config
                .has_decoder()
                .then(|| Mlp::zeros(&sizes(m, &mid, input_dim), Activation::Relu, Activation::Identity)),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.encoder.params();
        p.extend([
            &self.mu_layer.weights,
            &self.mu_layer.bias,
            &self.logvar_layer.weights,
            &self.logvar_layer.bias,
        ]);
        p.extend(self.head.params());
        if let Some(dec) = &self.decoder {
            p.extend(dec.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.encoder.params_mut();
        p.extend([
            &mut self.mu_layer.weights,
            &mut self.mu_layer.bias,
            &mut self.logvar_layer.weights,
            &mut self.logvar_layer.bias,
        ]);
        p.extend(self.head.params_mut());
        if let Some(dec) = &mut self.decoder {
            p.extend(dec.params_mut());
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(tape),
            mu: self.mu_layer.bind(tape),
            logvar: self.logvar_layer.bind(tape),
            head: self.head.bind(tape),
            decoder: self.decoder.as_ref().map(|d| d.bind(tape)),
            input_dim: self.input_dim,
        }
    }

    /// Binds to handles in the order of [`VariationalClassifier::params`].
    pub fn bind_with(&self, vars: &[Var]) -> Result<BoundModel> {
        let n_params = self.params().len();
        if vars.len() != n_params {
            return Err(Error::shape("bind", format!("{} handles for {n_params} parameters", vars.len())));
        }
        let mut rest = vars;
        let mut take = |k: usize| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            head
        };
        let encoder = self.encoder.bind_with(take(2 * self.encoder.layers.len()))?;
        let mu = Mlp { layers: vec![self.mu_layer.clone()] }.bind_with(take(2))?.layers.remove(0);
        let logvar = Mlp { layers: vec![self.logvar_layer.clone()] }.bind_with(take(2))?.layers.remove(0);
        let head = self.head.bind_with(take(2 * self.head.layers.len()))?;
        let decoder = match &self.decoder {
            Some(d) => Some(d.bind_with(take(2 * d.layers.len()))?),
            None => None,
        };
        Ok(BoundModel {
            encoder,
            mu,
            logvar,
            head,
            decoder,
            input_dim: self.input_dim,
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(
                "model input",
                format!("expected {} features, got {}", self.input_dim, x.cols()),
            ));
        }
        if !x.is_finite() {
            return Err(Error::invalid("input contains non-finite values"));
        }
        Ok(())
    }

    /// Posterior parameters `(μ, logvar)` for each row of `x`.
    pub fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(x)?;
        let mut mus = Vec::with_capacity(x.rows() * self.latent_dim());
        let mut lvs = Vec::with_capacity(x.rows() * self.latent_dim());
        for chunk in row_chunks(x.rows()) {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let xv = tape.leaf(x.select_rows(&chunk));
            let (mu, lv) = bound.encode(&mut tape, xv)?;
            mus.extend_from_slice(tape.value(mu).as_slice());
            lvs.extend_from_slice(tape.value(lv).as_slice());
        }
        let m = self.latent_dim();
        Ok((
            Matrix::from_vec(x.rows(), m, mus)?,
            Matrix::from_vec(x.rows(), m, lvs)?,
        ))
    }

    /// `p(y=1 | z=μ(x))` for each row.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(x.rows());
        for chunk in row_chunks(x.rows()) {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let xv = tape.leaf(x.select_rows(&chunk));
            let (mu, _) = bound.encode(&mut tape, xv)?;
            let logit = bound.head.forward(&mut tape, mu)?;
            let p = tape.sigmoid(logit);
            out.extend_from_slice(tape.value(p).as_slice());
        }
        Ok(out)
    }

    pub fn predict_proba_one(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_proba(&Matrix::row_vector(x))?[0])
    }
}

pub(crate) fn row_chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    const CHUNK: usize = 4096;
    (0..n.div_ceil(CHUNK)).map(move |c| (c * CHUNK..((c + 1) * CHUNK).min(n)).collect())
}

/// Model parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: BoundMlp,
    pub mu: BoundLayer,
    pub logvar: BoundLayer,
    pub head: BoundMlp,
    pub decoder: Option<BoundMlp>,
    pub input_dim: usize,
}

impl BoundModel {
    /// `(μ, clamped logvar)` for a batch.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let h = self.encoder.forward(tape, x)?;
        let mu = self.mu.forward(tape, h)?;
        let lv_raw = self.logvar.forward(tape, h)?;
        Ok((mu, tape.clamp(lv_raw, LOGVAR_MIN, LOGVAR_MAX)))
    }

    /// Handles in the order of [`VariationalClassifier::params`].
    pub fn params(&self) -> Vec<Var> {
        let mut p = self.encoder.params();
        p.extend(self.mu.params());
        p.extend(self.logvar.params());
        p.extend(self.head.params());
        if let Some(d) = &self.decoder {
            p.extend(d.params());
        }
        p
    }
}
