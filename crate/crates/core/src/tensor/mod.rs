//! Dense matrices, reverse-mode autodiff and the optimizer.

pub mod matrix;
pub mod optim;
pub mod tape;

pub use matrix::DenseMatrix;
pub use optim::{sgd_step, Parameter};
pub use tape::{Gradients, Tape, Var, LOG_EPS};
