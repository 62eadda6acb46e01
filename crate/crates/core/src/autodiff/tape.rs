//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation appends a node to a [`Tape`]; [`Tape::backward`] then
//! walks the tape once in reverse and stores the adjoint of every node.
//! A tape supports exactly one backward pass.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Sin(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug)]
struct Node {
    data: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Matrix>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn broadcast_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(usize, usize)> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape())
    } else if a.is_scalar() {
        Ok(b.shape())
    } else {
        Err(Error::shape(
            op,
            format!(
                "{}x{} vs {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        ))
    }
}

fn binary(a: &Matrix, b: &Matrix, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Matrix {
    let n = shape.0 * shape.1;
    let av = a.as_slice();
    let bv = b.as_slice();
    let data = (0..n)
        .map(|i| {
            let x = if av.len() == 1 { av[0] } else { av[i] };
            let y = if bv.len() == 1 { bv[0] } else { bv[i] };
            f(x, y)
        })
        .collect();
    Matrix::from_vec(shape.0, shape.1, data).expect("shape computed")
}

/// Reduce an upstream gradient to the shape of a (possibly scalar-broadcast) operand.
fn reduce_to(grad: Matrix, target: &Matrix) -> Matrix {
    if target.is_scalar() && !grad.is_scalar() {
        Matrix::scalar(grad.sum())
    } else {
        grad
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Matrix, op: Op) -> Var {
        self.nodes.push(Node { data, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, data: Matrix) -> Var {
        self.push(data, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].data
    }

    /// Adjoint of `v`; `None` until [`Tape::backward`] has run.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.as_ref().map(|g| &g[v.0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let shape = broadcast_shape("add", x, y)?;
        let out = binary(x, y, shape, |p, q| p + q);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let shape = broadcast_shape("sub", x, y)?;
        let out = binary(x, y, shape, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let shape = broadcast_shape("mul", x, y)?;
        let out = binary(x, y, shape, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(bad) = x.as_slice().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        let out = x.map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sin);
        self.push(out, Op::Sin(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Matrix::scalar(x.sum() / x.len() as f64);
        self.push(out, Op::Mean(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Reverse pass from a scalar `loss`. Fails if called twice on the same tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Contract(
                "backward already ran on this tape; build a new tape".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut send = |v: Var, contrib: Matrix| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            };
            let val = |v: Var| &self.nodes[v.0].data;
            match node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    send(a, g.matmul(&val(b).transpose())?);
                    send(b, val(a).transpose().matmul(&g)?);
                }
                Op::Add(a, b) => {
                    send(a, reduce_to(g.clone(), val(a)));
                    send(b, reduce_to(g.clone(), val(b)));
                }
                Op::Sub(a, b) => {
                    send(a, reduce_to(g.clone(), val(a)));
                    send(b, reduce_to(g.map(|v| -v), val(b)));
                }
                Op::Mul(a, b) => {
                    let shape = g.shape();
                    let ga = binary(&g, val(b), shape, |p, q| p * q);
                    let gb = binary(&g, val(a), shape, |p, q| p * q);
                    send(a, reduce_to(ga, val(a)));
                    send(b, reduce_to(gb, val(b)));
                }
                Op::Scale(a, c) => send(a, g.map(|v| v * c)),
                Op::AddScalar(a) => send(a, g.clone()),
                Op::Exp(a) => send(a, g.zip_map(&node.data, |p, y| p * y)),
                Op::Log(a) => send(a, g.zip_map(val(a), |p, x| p / x)),
                Op::Sigmoid(a) => send(a, g.zip_map(&node.data, |p, s| p * s * (1.0 - s))),
                Op::Tanh(a) => send(a, g.zip_map(&node.data, |p, t| p * (1.0 - t * t))),
                Op::Relu(a) => send(a, g.zip_map(val(a), |p, x| if x > 0.0 { p } else { 0.0 })),
                Op::Softplus(a) => send(a, g.zip_map(val(a), |p, x| p * sigmoid(x))),
                Op::Sin(a) => send(a, g.zip_map(val(a), |p, x| p * x.cos())),
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    send(a, Matrix::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = val(a).shape();
                    send(a, Matrix::filled(r, c, g.item() / (r * c) as f64));
                }
                Op::Transpose(a) => send(a, g.transpose()),
                Op::Clamp(a, lo, hi) => send(
                    a,
                    g.zip_map(val(a), |p, x| if x > lo && x < hi { p } else { 0.0 }),
                ),
            }
            grads[id] = Some(g);
        }

        self.grads = Some(
            grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.unwrap_or_else(|| Matrix::zeros(n.data.rows(), n.data.cols())))
                .collect(),
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).item(), 0.5);
    }

    #[test]
    fn softplus_of_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.softplus(x);
        assert!((t.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(softplus(-1000.0) < 1e-300);
    }

    #[test]
    fn square_power_rule() {
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sigmoid_zero_weights_gradient() {
        // loss = sum(sigmoid(W x)) with W = 0: dW_ij = sigma'(0) * x_j = 0.25 x_j
        let mut t = Tape::new();
        let w = t.leaf(Matrix::zeros(3, 2));
        let x = t.leaf(Matrix::column(&[1.5, -2.0]));
        let wx = t.matmul(w, x).unwrap();
        let s = t.sigmoid(wx);
        let loss = t.sum(s);
        t.backward(loss).unwrap();
        let g = t.grad(w).unwrap();
        for r in 0..3 {
            assert_eq!(g.get(r, 0), 0.25 * 1.5);
            assert_eq!(g.get(r, 1), 0.25 * -2.0);
        }
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(2, 2, 1.0));
        let c = t.scalar(4.0);
        t.backward(c).unwrap();
        assert!(t.grad(x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut t = Tape::new();
        let x = t.scalar(2.0);
        let y = t.exp(x);
        t.backward(y).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn log_domain_error() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn add_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 1));
        let b = t.leaf(Matrix::zeros(1, 2));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::filled(2, 3, 1.0));
        let s = t.scalar(2.0);
        let p = t.mul(a, s).unwrap();
        let loss = t.sum(p);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(s).unwrap().item(), 6.0);
        assert_eq!(t.grad(a).unwrap().get(1, 2), 2.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.relu(x);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 0.0);
    }
}
