//! Minimal reverse-mode autodiff, dense layers and Adam.

mod adam;
mod gradcheck;
mod layer;
mod matrix;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use layer::{collect_grads, Activation, BoundLayer, BoundMlp, DenseLayer, Mlp};
pub use matrix::Matrix;
pub use tape::{Tape, Var};

pub(crate) use tape::sigmoid;
