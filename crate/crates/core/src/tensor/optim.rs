use crate::error::{Error, Result};
use crate::tensor::matrix::DenseMatrix;

/// A trainable matrix together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: DenseMatrix,
    pub gradient: DenseMatrix,
    pub requires_grad: bool,
}

impl Parameter {
    pub fn new(value: DenseMatrix) -> Self {
        let gradient = DenseMatrix::zeros(value.rows(), value.cols());
        Self {
            value,
            gradient,
            requires_grad: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.gradient.as_mut_slice().fill(0.0);
    }

    pub fn accumulate(&mut self, grad: &DenseMatrix) -> Result<()> {
        self.gradient.add_assign(grad)
    }
}

/// Plain SGD with optional L2 weight decay: `p ← p − lr·(g + wd·p)`.
pub fn sgd_step(params: &mut [Parameter], lr: f64, weight_decay: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be a finite value >= 0, got {lr}")));
    }
    if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
        return Err(Error::invalid(format!("weight decay must be a finite value >= 0, got {weight_decay}")));
    }
    for p in params.iter_mut().filter(|p| p.requires_grad) {
        for (v, &g) in p.value.as_mut_slice().iter_mut().zip(p.gradient.as_slice()) {
            *v -= lr * (g + weight_decay * *v);
        }
    }
    Ok(())
}
