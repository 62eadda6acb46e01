use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

/// Fully connected layer `y = act(x Wᵀ + b)` with `W: out×in`, `b: 1×out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: Matrix::zeros(1, out_dim),
            activation,
        }
    }

    /// Uniform Glorot init (He-scaled for relu); zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            _ => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        DenseLayer {
            weights: Matrix::from_vec(out_dim, in_dim, data).expect("sized"),
            bias: Matrix::zeros(1, out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.is_finite()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLayer {
        BoundLayer {
            weights: tape.leaf(self.weights.clone()),
            bias: tape.leaf(self.bias.clone()),
            activation: self.activation,
        }
    }

    /// Forward pass without recording gradients.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf(x.clone());
        let y = bound.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// A layer whose parameters live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub weights: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl BoundLayer {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let batch = tape.value(x).rows();
        let wt = tape.transpose(self.weights);
        let xw = tape.matmul(x, wt).map_err(|_| {
            Error::shape(
                "dense",
                format!(
                    "input has {} features, layer expects {}",
                    tape.value(x).cols(),
                    tape.value(self.weights).cols()
                ),
            )
        })?;
        // bias broadcast over rows as ones(B×1)·b(1×out)
        let ones = tape.leaf(Matrix::filled(batch, 1, 1.0));
        let b = tape.matmul(ones, self.bias)?;
        let pre = tape.add(xw, b)?;
        Ok(self.activation.apply(tape, pre))
    }

    pub fn params(&self) -> [Var; 2] {
        [self.weights, self.bias]
    }
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last layer `output`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::init(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::zeros(sizes[i], sizes[i + 1], act)
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    /// Uses existing handles (`w, b` per layer, as in [`Mlp::params`])
    /// instead of fresh leaves.
    pub fn bind_with(&self, vars: &[Var]) -> Result<BoundMlp> {
        if vars.len() != 2 * self.layers.len() {
            return Err(Error::shape(
                "bind",
                format!("{} handles for {} layers", vars.len(), self.layers.len()),
            ));
        }
        Ok(BoundMlp {
            layers: self
                .layers
                .iter()
                .zip(vars.chunks(2))
                .map(|(l, v)| BoundLayer {
                    weights: v[0],
                    bias: v[1],
                    activation: l.activation,
                })
                .collect(),
        })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf(x.clone());
        let y = bound.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundLayer>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(tape, x)?;
        }
        Ok(x)
    }

    /// Parameter handles in the same order as [`Mlp::params`].
    pub fn params(&self) -> Vec<Var> {
        self.layers.iter().flat_map(BoundLayer::params).collect()
    }
}

/// Copies the adjoints of `vars` out of a tape that has run backward.
pub fn collect_grads(tape: &Tape, vars: &[Var]) -> Result<Vec<Matrix>> {
    vars.iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .ok_or_else(|| Error::Contract("gradients requested before backward".into()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_layer_outputs_activation_of_zero() {
        let layer = DenseLayer::zeros(3, 2, Activation::Sigmoid);
        let y = layer.apply(&Matrix::filled(4, 3, 7.0)).unwrap();
        assert_eq!(y.shape(), (4, 2));
        assert!(y.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn dense_forward_matches_manual() {
        let layer = DenseLayer {
            weights: Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap(),
            bias: Matrix::row_vector(&[0.5, -0.25]),
            activation: Activation::Identity,
        };
        let y = layer.apply(&Matrix::row_vector(&[3.0, 4.0])).unwrap();
        assert_eq!(y.as_slice(), &[11.5, -1.25]);
    }

    #[test]
    fn wrong_input_width_is_shape_error() {
        let layer = DenseLayer::zeros(3, 2, Activation::Identity);
        assert!(matches!(
            layer.apply(&Matrix::zeros(1, 2)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = Mlp::init(&[4, 8, 2], Activation::Relu, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(3));
        let b = Mlp::init(&[4, 8, 2], Activation::Relu, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.params().len(), 4);
    }
}
