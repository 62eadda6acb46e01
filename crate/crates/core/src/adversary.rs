//! Latent-space GAN for minority-class codes.
//!
//! "Real" samples are encoder means `μ(x)` of genuine minority rows, "fake"
//! samples are generator outputs `G(u)`, `u ~ N(0, I_m)`. The discriminator
//! outputs the logit of `P(real)`. Encoder latents are treated as constants
//! here, so the adversary never sends gradients into the encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    collect_grads, Activation, AdamConfig, AdamState, BoundMlp, DenseLayer, Matrix, Mlp, Tape, Var,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorLoss {
    /// `E log(1 − D(G(u)))`, minimized by G.
    Minimax,
    /// `−E log D(G(u))`.
    Nonsaturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvConfig {
    pub enabled: bool,
    pub d_steps_per_g_step: usize,
    /// Defaults to half the model learning rate.
    pub adv_lr: Option<f64>,
    pub n_aug_per_batch: usize,
    pub generator_loss: GeneratorLoss,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            enabled: false,
            d_steps_per_g_step: 1,
            adv_lr: None,
            n_aug_per_batch: 16,
            generator_loss: GeneratorLoss::Nonsaturating,
            generator_hidden: vec![32],
            discriminator_hidden: vec![32],
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_steps_per_g_step == 0 {
            return Err(Error::Config("d_steps_per_g_step must be at least 1".into()));
        }
        if let Some(lr) = self.adv_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config("adv_lr must be positive".into()));
            }
        }
        if self
            .generator_hidden
            .iter()
            .chain(&self.discriminator_hidden)
            .any(|&h| h == 0)
        {
            return Err(Error::Config("adversary layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_lr(&self, model_lr: f64) -> f64 {
        self.adv_lr.unwrap_or(model_lr / 2.0)
    }
}

fn widths(m: usize, hidden: &[usize], out: usize) -> Vec<usize> {
    let mut s = vec![m];
    s.extend_from_slice(hidden);
    s.push(out);
    s
}

/// Maps noise `u ∈ ℝ^m` to a latent code in `ℝ^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGenerator {
    pub net: Mlp,
}

impl LatentGenerator {
    pub fn init<R: rand::Rng + ?Sized>(latent_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        LatentGenerator {
            net: Mlp::init(
                &widths(latent_dim, hidden, latent_dim),
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
        }
    }

    /// Single linear layer `G(u) = u`.
    pub fn identity(latent_dim: usize) -> Self {
        LatentGenerator {
            net: Mlp {
                layers: vec![DenseLayer {
                    weights: Matrix::identity(latent_dim),
                    bias: Matrix::zeros(1, latent_dim),
                    activation: Activation::Identity,
                }],
            },
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn generate(&self, noise: &Matrix) -> Result<Matrix> {
        self.net.apply(noise)
    }
}

/// Maps a latent code to the logit of `P(real)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDiscriminator {
    pub net: Mlp,
}

impl LatentDiscriminator {
    pub fn init<R: rand::Rng + ?Sized>(latent_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        LatentDiscriminator {
            net: Mlp::init(
                &widths(latent_dim, hidden, 1),
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
        }
    }

    pub fn zeros(latent_dim: usize, hidden: &[usize]) -> Self {
        LatentDiscriminator {
            net: Mlp::zeros(&widths(latent_dim, hidden, 1), Activation::Relu, Activation::Identity),
        }
    }

    pub fn logits(&self, z: &Matrix) -> Result<Vec<f64>> {
        Ok(self.net.apply(z)?.into_vec())
    }

    /// Fraction of codes classified correctly (real iff logit > 0); exact
    /// ties count half.
    pub fn accuracy(&self, real: &Matrix, fake: &Matrix) -> Result<f64> {
        let score = |logits: Vec<f64>, real: bool| -> f64 {
            logits
                .iter()
                .map(|&a| {
                    if a == 0.0 {
                        0.5
                    } else if (a > 0.0) == real {
                        1.0
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        let n = (real.rows() + fake.rows()) as f64;
        Ok((score(self.logits(real)?, true) + score(self.logits(fake)?, false)) / n)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdversarialLosses {
    pub d_loss: Var,
    pub g_loss: Var,
}

/// Discriminator and generator losses in stable logit form:
/// `log D = −softplus(−a)`, `log(1 − D) = −softplus(a)`.
pub fn adversarial_losses(
    tape: &mut Tape,
    discriminator: &BoundMlp,
    real: Var,
    fake: Var,
    mode: GeneratorLoss,
) -> Result<AdversarialLosses> {
    if tape.value(real).rows() == 0 || tape.value(fake).rows() == 0 {
        return Err(Error::invalid("adversarial losses need nonempty real and fake batches"));
    }
    let a_real = discriminator.forward(tape, real)?;
    let a_fake = discriminator.forward(tape, fake)?;
    let neg_real = tape.scale(a_real, -1.0);
    let sp_real = tape.softplus(neg_real);
    let sp_fake = tape.softplus(a_fake);
    let l_real = tape.mean(sp_real);
    let l_fake = tape.mean(sp_fake);
    let d_loss = tape.add(l_real, l_fake)?;
    let g_loss = match mode {
        GeneratorLoss::Minimax => tape.scale(l_fake, -1.0),
        GeneratorLoss::Nonsaturating => {
            let neg_fake = tape.scale(a_fake, -1.0);
            let sp = tape.softplus(neg_fake);
            tape.mean(sp)
        }
    };
    Ok(AdversarialLosses { d_loss, g_loss })
}

/// `(d_loss, g_loss)` values without recording gradients.
pub fn adversarial_loss_values(
    discriminator: &LatentDiscriminator,
    real: &Matrix,
    fake: &Matrix,
    mode: GeneratorLoss,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let d = discriminator.net.bind(&mut tape);
    let r = tape.leaf(real.clone());
    let f = tape.leaf(fake.clone());
    let l = adversarial_losses(&mut tape, &d, r, f, mode)?;
    Ok((tape.value(l.d_loss).item(), tape.value(l.g_loss).item()))
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// `n` codes `G(u)` with `u ~ N(0, I_m)` drawn from a seeded RNG.
pub fn synth_minority_latents(generator: &LatentGenerator, n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generator.generate(&standard_normal(n, generator.latent_dim(), &mut rng))
}

/// Generator, discriminator and their optimizers, owned by the training loop.
#[derive(Debug, Clone)]
pub struct LatentAdversary {
    pub config: AdvConfig,
    pub generator: LatentGenerator,
    pub discriminator: LatentDiscriminator,
    g_opt: AdamState,
    d_opt: AdamState,
    rng: ChaCha8Rng,
    /// Batches without minority rows, where the GAN update was skipped.
    pub skipped_batches: usize,
}

/// RNG stream reserved for the adversary, separate from the model's streams.
const ADVERSARY_STREAM: u64 = 3;

impl LatentAdversary {
    pub fn new(latent_dim: usize, config: &AdvConfig, model_lr: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ADVERSARY_STREAM);
        let generator = LatentGenerator::init(latent_dim, &config.generator_hidden, &mut rng);
        let discriminator =
            LatentDiscriminator::init(latent_dim, &config.discriminator_hidden, &mut rng);
        Ok(Self::from_parts(config, generator, discriminator, model_lr, rng))
    }

    pub fn from_parts(
        config: &AdvConfig,
        generator: LatentGenerator,
        discriminator: LatentDiscriminator,
        model_lr: f64,
        rng: ChaCha8Rng,
    ) -> Self {
        let opt = AdamConfig::with_lr(config.effective_lr(model_lr));
        LatentAdversary {
            config: config.clone(),
            g_opt: AdamState::new(generator.net.params(), opt),
            d_opt: AdamState::new(discriminator.net.params(), opt),
            generator,
            discriminator,
            rng,
            skipped_batches: 0,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }

    pub fn noise(&mut self, n: usize) -> Matrix {
        let m = self.latent_dim();
        standard_normal(n, m, &mut self.rng)
    }

    /// One discriminator update on the given codes; returns the loss before it.
    pub fn discriminator_step(&mut self, real: &Matrix, fake: &Matrix) -> Result<f64> {
        let mut tape = Tape::new();
        let d = self.discriminator.net.bind(&mut tape);
        let r = tape.leaf(real.clone());
        let f = tape.leaf(fake.clone());
        let l = adversarial_losses(&mut tape, &d, r, f, self.config.generator_loss)?;
        let value = tape.value(l.d_loss).item();
        tape.backward(l.d_loss)?;
        let grads = collect_grads(&tape, &d.params())?;
        self.d_opt.step(self.discriminator.net.params_mut(), &grads)?;
        Ok(value)
    }

    /// One generator update against the current discriminator on `n` fresh
    /// noise draws; returns the generator loss before it.
    pub fn generator_step(&mut self, n: usize) -> Result<f64> {
        let u = self.noise(n);
        let mut tape = Tape::new();
        let g = self.generator.net.bind(&mut tape);
        let d = self.discriminator.net.bind(&mut tape);
        let uv = tape.leaf(u);
        let fake = g.forward(&mut tape, uv)?;
        let a = d.forward(&mut tape, fake)?;
        let loss = match self.config.generator_loss {
            GeneratorLoss::Minimax => {
                let sp = tape.softplus(a);
                let m = tape.mean(sp);
                tape.scale(m, -1.0)
            }
            GeneratorLoss::Nonsaturating => {
                let na = tape.scale(a, -1.0);
                let sp = tape.softplus(na);
                tape.mean(sp)
            }
        };
        let value = tape.value(loss).item();
        tape.backward(loss)?;
        let grads = collect_grads(&tape, &g.params())?;
        self.g_opt.step(self.generator.net.params_mut(), &grads)?;
        Ok(value)
    }

    /// Discriminator steps against fresh generator output, then one generator
    /// step. With no real codes the update is skipped and counted.
    pub fn adversary_updates(&mut self, real_latents: &Matrix) -> Result<bool> {
        let n = real_latents.rows();
        if n == 0 {
            self.skipped_batches += 1;
            return Ok(false);
        }
        for _ in 0..self.config.d_steps_per_g_step {
            let u = self.noise(n);
            let fake = self.generator.generate(&u)?;
            self.discriminator_step(real_latents, &fake)?;
        }
        self.generator_step(n)?;
        Ok(true)
    }

    /// `n_aug_per_batch` generated codes for the classifier, or `None` when
    /// augmentation is off.
    pub fn auxiliary_latents(&mut self) -> Result<Option<Matrix>> {
        let n = self.config.n_aug_per_batch;
        if n == 0 {
            return Ok(None);
        }
        let u = self.noise(n);
        self.generator.generate(&u).map(Some)
    }
}
