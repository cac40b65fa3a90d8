use crate::error::{Error, Result};
use crate::spectral::{extreme_eigenpairs, laplacian, project, project_value, sparse_self_similarity, SpectralBasis};
use crate::tensor::{DenseMatrix, Tape, Var};

/// Extreme eigenpairs of the kNN self-similarity Laplacian of `hidden`.
/// Returns `None` when the graph is too small for `k_eig` pairs on each end.
/// `k_sim` is clamped to `N - 1`.
pub fn similarity_basis(hidden: &DenseMatrix, k_sim: usize, k_eig: usize) -> Result<Option<SpectralBasis>> {
    let n = hidden.rows();
    if k_eig == 0 || k_sim == 0 {
        return Err(Error::invalid("k_sim and k_eig must be >= 1"));
    }
    if n < 2 || n < 2 * k_eig {
        log::debug!("spectral alignment skipped: {n} nodes cannot supply {k_eig} eigenpairs per end");
        return Ok(None);
    }
    let sg = sparse_self_similarity(hidden, k_sim.min(n - 1))?;
    extreme_eigenpairs(&laplacian(&sg), k_eig).map(Some)
}

/// Sum over the `k_eig` low and high eigenvectors of the mean squared
/// difference between local and global rank-one projections. Each side is
/// projected onto its own basis.
pub fn fgma_loss_with_bases(
    tape: &mut Tape,
    local_hidden: Var,
    local_basis: &SpectralBasis,
    global_hidden: &DenseMatrix,
    global_basis: &SpectralBasis,
) -> Result<Var> {
    let target = FgmaTarget::from_basis(global_hidden, global_basis)?;
    target.loss_with_basis(tape, local_hidden, local_basis)
}

/// Frozen global-side projections.
#[derive(Clone, Debug)]
pub struct FgmaTarget {
    low: Vec<DenseMatrix>,
    high: Vec<DenseMatrix>,
    k_sim: usize,
    /// Global embedding and its basis, reused when the local embedding is
    /// bitwise identical to it.
    cached: Option<(DenseMatrix, SpectralBasis)>,
}

impl FgmaTarget {
    /// `None` when the client is too small for spectral alignment.
    pub fn new(global_hidden: &DenseMatrix, k_sim: usize, k_eig: usize) -> Result<Option<Self>> {
        let Some(basis) = similarity_basis(global_hidden, k_sim, k_eig)? else {
            return Ok(None);
        };
        let mut target = Self::from_basis(global_hidden, &basis)?;
        target.k_sim = k_sim;
        target.cached = Some((global_hidden.clone(), basis));
        Ok(Some(target))
    }

    fn from_basis(global_hidden: &DenseMatrix, basis: &SpectralBasis) -> Result<Self> {
        let proj = |vecs: &[Vec<f64>]| vecs.iter().map(|u| project_value(global_hidden, u)).collect::<Result<Vec<_>>>();
        Ok(Self {
            low: proj(&basis.low_vecs)?,
            high: proj(&basis.high_vecs)?,
            k_sim: 1,
            cached: None,
        })
    }

    pub fn k_eig(&self) -> usize {
        self.low.len()
    }

    /// Builds the local basis from the current value of `local_hidden`; the
    /// eigenvectors themselves carry no gradient.
    pub fn loss(&self, tape: &mut Tape, local_hidden: Var) -> Result<Var> {
        if let Some((global, basis)) = &self.cached {
            if tape.value(local_hidden) == global {
                return self.loss_with_basis(tape, local_hidden, basis);
            }
        }
        let value = tape.value(local_hidden).clone();
        let basis = similarity_basis(&value, self.k_sim, self.k_eig())?
            .ok_or_else(|| Error::invalid("local embedding too small for the global basis size"))?;
        self.loss_with_basis(tape, local_hidden, &basis)
    }

    fn loss_with_basis(&self, tape: &mut Tape, local_hidden: Var, basis: &SpectralBasis) -> Result<Var> {
        if basis.low_vecs.len() != self.low.len() || basis.high_vecs.len() != self.high.len() {
            return Err(Error::invalid("local and global bases differ in size"));
        }
        let mut total: Option<Var> = None;
        let pairs = basis.low_vecs.iter().zip(&self.low).chain(basis.high_vecs.iter().zip(&self.high));
        for (u, target) in pairs {
            let z = project(tape, local_hidden, u)?;
            let t = tape.constant(target.clone());
            let term = tape.mse(z, t)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        total.ok_or_else(|| Error::invalid("empty spectral basis"))
    }
}

/// One-shot spectral alignment. `Ok(None)` means the term is skipped.
pub fn fgma_loss(
    tape: &mut Tape,
    local_hidden: Var,
    global_hidden: &DenseMatrix,
    k_sim: usize,
    k_eig: usize,
) -> Result<Option<Var>> {
    match FgmaTarget::new(global_hidden, k_sim, k_eig)? {
        Some(target) => target.loss(tape, local_hidden).map(Some),
        None => Ok(None),
    }
}
