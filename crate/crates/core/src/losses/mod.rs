//! Prototype distillation, spectral alignment and the combined objective.

mod fgma;
mod fkd;
mod prototypes;

pub use fgma::{fgma_loss, fgma_loss_with_bases, similarity_basis, FgmaTarget};
pub use fkd::{fkd_loss, FkdTarget};
pub use prototypes::{
    aggregate_global_repository, local_prototypes, LocalPrototypes, PrototypeRepository,
    DEFAULT_ANCHORS_PER_CLASS,
};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda1.is_finite() && lambda2 >= 0.0 && lambda2.is_finite()) {
            return Err(Error::invalid(format!(
                "loss weights must be finite and >= 0, got {lambda1}, {lambda2}"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }
}

/// `ce + λ₁·fkd + λ₂·fgma`. Terms that are absent or carry zero weight are
/// left off the tape entirely, so the result is then the cross-entropy node
/// itself.
pub fn total_loss(tape: &mut Tape, ce: Var, fkd: Option<Var>, fgma: Option<Var>, w: LossWeights) -> Result<Var> {
    let mut total = ce;
    for (term, weight) in [(fkd, w.lambda1), (fgma, w.lambda2)] {
        if let Some(t) = term.filter(|_| weight != 0.0) {
            let scaled = tape.scale(t, weight)?;
            total = tape.add(total, scaled)?;
        }
    }
    Ok(total)
}
