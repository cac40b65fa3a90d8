//! Similarity graphs, Laplacians, eigen-extremes, frequency projections and
//! the client spectral-heterogeneity diagnostic.

mod eigen;

pub use eigen::{normalize_sign, symmetric_eigen, SymmetricEigen, SYMMETRY_TOL};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::matrix::dot;
use crate::tensor::tape::unit_rows;
use crate::tensor::{DenseMatrix, Tape, Var, LOG_EPS};

pub const DEFAULT_K_SIM: usize = 10;
pub const DEFAULT_K_EIG: usize = 4;
pub const DEFAULT_BINS: usize = 20;
/// Laplace smoothing added to every histogram bin before renormalizing.
pub const HISTOGRAM_EPS: f64 = 1e-6;
const UNIT_NORM_TOL: f64 = 1e-8;

/// k-nearest-neighbor cosine similarity graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    pub s_prime: DenseMatrix,
    pub k_sim: usize,
}

/// Keeps, for every row, the cosine similarity to its `k_sim` most similar
/// other rows (ties by lower id), clamps negatives to 0 and symmetrizes with
/// an elementwise max.
pub fn sparse_self_similarity(features: &DenseMatrix, k_sim: usize) -> Result<SimilarityGraph> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::invalid("similarity graph needs at least two nodes"));
    }
    if k_sim == 0 || k_sim >= n {
        return Err(Error::invalid(format!("k_sim must lie in [1, {n}), got {k_sim}")));
    }
    let unit = unit_rows(features);
    let mut s = DenseMatrix::zeros(n, n);
    let mut candidates: Vec<(usize, f64)> = Vec::with_capacity(n);
    for u in 0..n {
        candidates.clear();
        candidates.extend((0..n).filter(|&v| v != u).map(|v| (v, dot(unit.row(u), unit.row(v)))));
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(v, sim) in candidates.iter().take(k_sim) {
            s.set(u, v, sim.clamp(0.0, 1.0));
        }
    }
    for u in 0..n {
        for v in (u + 1)..n {
            let m = s.get(u, v).max(s.get(v, u));
            s.set(u, v, m);
            s.set(v, u, m);
        }
    }
    Ok(SimilarityGraph { s_prime: s, k_sim })
}

/// `L′ = D′ − S′`.
pub fn laplacian(sg: &SimilarityGraph) -> DenseMatrix {
    let s = &sg.s_prime;
    let mut l = s.scale(-1.0);
    for i in 0..s.rows() {
        let degree: f64 = s.row(i).iter().sum();
        l.add_at(i, i, degree);
    }
    l
}

/// `I − D^{-1/2} A D^{-1/2}` on the structural adjacency, with isolated
/// nodes given an all-zero row (eigenvalue 0). Spectrum lies in `[0, 2]`.
pub fn normalized_laplacian(g: &Graph) -> DenseMatrix {
    let n = g.num_nodes();
    let mut l = DenseMatrix::zeros(n, n);
    for u in 0..n {
        let du = g.degree(u) as f64;
        if du == 0.0 {
            continue;
        }
        l.set(u, u, 1.0);
        for &v in g.neighbors(u) {
            let dv = g.degree(v) as f64;
            l.set(u, v, -1.0 / (du * dv).sqrt());
        }
    }
    l
}

/// Low- and high-frequency eigenpairs of a Laplacian.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBasis {
    /// Ascending.
    pub low_vals: Vec<f64>,
    pub low_vecs: Vec<Vec<f64>>,
    /// Descending.
    pub high_vals: Vec<f64>,
    pub high_vecs: Vec<Vec<f64>>,
}

pub fn extreme_eigenpairs(l: &DenseMatrix, k_eig: usize) -> Result<SpectralBasis> {
    let n = l.rows();
    if k_eig == 0 || 2 * k_eig > n {
        return Err(Error::invalid(format!("k_eig must lie in [1, {}], got {k_eig}", n / 2)));
    }
    let e = symmetric_eigen(l)?;
    Ok(SpectralBasis {
        low_vals: e.values[..k_eig].to_vec(),
        low_vecs: (0..k_eig).map(|k| e.vector(k)).collect(),
        high_vals: (0..k_eig).map(|k| e.values[n - 1 - k]).collect(),
        high_vecs: (0..k_eig).map(|k| e.vector(n - 1 - k)).collect(),
    })
}

/// Rank-one projection `u (uᵀ H)`; `u` enters the tape as a constant.
pub fn project(tape: &mut Tape, features: Var, u: &[f64]) -> Result<Var> {
    let rows = tape.value(features).rows();
    if u.len() != rows {
        return Err(Error::Dimension {
            op: "project",
            left: (u.len(), 1),
            right: tape.value(features).shape(),
        });
    }
    let norm = dot(u, u).sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid(format!("projection vector has norm {norm}, expected 1")));
    }
    let col = tape.constant(DenseMatrix::column_vector(u));
    let row = tape.constant(DenseMatrix::new(1, u.len(), u.to_vec())?);
    let coeffs = tape.matmul(row, features)?;
    tape.matmul(col, coeffs)
}

/// Value-only projection `u (uᵀ H)`.
pub fn project_value(features: &DenseMatrix, u: &[f64]) -> Result<DenseMatrix> {
    let row = DenseMatrix::new(1, u.len(), u.to_vec())?;
    DenseMatrix::column_vector(u).matmul(&row.matmul(features)?)
}

/// Histogram of all eigenvalues of `l` over `[0, range_max]`, Laplace
/// smoothed and renormalized.
pub fn eigenvalue_histogram(l: &DenseMatrix, bins: usize, range_max: f64) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::invalid("histogram needs at least two bins"));
    }
    if !(range_max > 0.0) {
        return Err(Error::invalid("histogram range must be positive"));
    }
    let e = symmetric_eigen(l)?;
    let width = range_max / bins as f64;
    let mut counts = vec![0.0; bins];
    for &lambda in &e.values {
        let pos = (lambda / width + 1e-9).floor();
        let idx = if pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
        counts[idx] += 1.0;
    }
    let total = e.values.len().max(1) as f64;
    let smoothed: Vec<f64> = counts.iter().map(|c| c / total + HISTOGRAM_EPS).collect();
    let z: f64 = smoothed.iter().sum();
    Ok(smoothed.into_iter().map(|x| x / z).collect())
}

/// Histogram of a client's normalized structural Laplacian on `[0, 2]`.
pub fn structural_histogram(g: &Graph, bins: usize) -> Result<Vec<f64>> {
    eigenvalue_histogram(&normalized_laplacian(g), bins, 2.0)
}

pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(LOG_EPS).ln() - b.max(LOG_EPS).ln()))
        .sum()
}

/// `entry(i, j) = KL(hist_i ‖ hist_j)`.
pub fn spectral_kl_heatmap(histograms: &[Vec<f64>]) -> Result<DenseMatrix> {
    let bins = histograms.first().map_or(0, Vec::len);
    if histograms.iter().any(|h| h.len() != bins) {
        return Err(Error::invalid("histograms have different bin counts"));
    }
    let k = histograms.len();
    Ok(DenseMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            kl_divergence(&histograms[i], &histograms[j]).max(0.0)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pair_similarity() {
        let f = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let sg = sparse_self_similarity(&f, 1).unwrap();
        assert!(sg.s_prime.sub(&DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn orthogonal_rows_give_zero() {
        let sg = sparse_self_similarity(&DenseMatrix::identity(3), 2).unwrap();
        assert_eq!(sg.s_prime, DenseMatrix::zeros(3, 3));
        assert_eq!(laplacian(&sg), DenseMatrix::zeros(3, 3));
    }

    #[test]
    fn similarity_argument_checks() {
        assert!(sparse_self_similarity(&DenseMatrix::zeros(1, 2), 1).is_err());
        assert!(sparse_self_similarity(&DenseMatrix::zeros(3, 2), 3).is_err());
        assert!(sparse_self_similarity(&DenseMatrix::zeros(3, 2), 0).is_err());
    }

    #[test]
    fn path_laplacian() {
        let sg = SimilarityGraph {
            s_prime: DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            k_sim: 1,
        };
        assert_eq!(laplacian(&sg).as_slice(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn textbook_two_node_eigenpairs() {
        let l = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let b = extreme_eigenpairs(&l, 1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(b.low_vals[0].abs() < 1e-14);
        assert!((b.high_vals[0] - 2.0).abs() < 1e-14);
        assert!((b.low_vecs[0][0] - r).abs() < 1e-14 && (b.low_vecs[0][1] - r).abs() < 1e-14);
        assert!((b.high_vecs[0][0] - r).abs() < 1e-14 && (b.high_vecs[0][1] + r).abs() < 1e-14);
        assert!(extreme_eigenpairs(&l, 2).is_err());
    }

    #[test]
    fn diagonal_extremes() {
        let l = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 3.0]]).unwrap();
        let b = extreme_eigenpairs(&l, 1).unwrap();
        assert_eq!((b.low_vals[0], b.low_vecs[0].clone()), (1.0, vec![1.0, 0.0, 0.0]));
        assert_eq!((b.high_vals[0], b.high_vecs[0].clone()), (3.0, vec![0.0, 0.0, 1.0]));
    }

    #[test]
    fn projection_cases() {
        let u = vec![0.6, 0.8];
        let mut t = Tape::new();
        let h = t.constant(DenseMatrix::column_vector(&u));
        let z = project(&mut t, h, &u).unwrap();
        assert!(t.value(z).sub(&DenseMatrix::column_vector(&u)).unwrap().max_abs() < 1e-15);
        let perp = t.constant(DenseMatrix::column_vector(&[0.8, -0.6]));
        let z = project(&mut t, perp, &u).unwrap();
        assert!(t.value(z).max_abs() < 1e-15);
        assert!(project(&mut t, h, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn histogram_edge_cases() {
        let edgeless = Graph::new(4, vec![], DenseMatrix::zeros(4, 1), vec![None; 4], 1).unwrap();
        let h = structural_histogram(&edgeless, 20).unwrap();
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(h[0] > 0.99 && h[1..].iter().all(|&x| x < 1e-5));
        assert!(eigenvalue_histogram(&DenseMatrix::zeros(2, 2), 1, 2.0).is_err());
    }

    #[test]
    fn complete_bipartite_k22_bins() {
        let g = Graph::new(4, vec![(0, 2), (0, 3), (1, 2), (1, 3)], DenseMatrix::zeros(4, 1), vec![None; 4], 1).unwrap();
        let l = normalized_laplacian(&g);
        // Oracle: a direct eigensolve of the 4×4 matrix.
        let oracle = nalgebra::DMatrix::from_row_slice(4, 4, l.as_slice()).symmetric_eigen();
        let mut vals: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        for (v, e) in vals.iter().zip([0.0, 1.0, 1.0, 2.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        let h = eigenvalue_histogram(&l, 20, 2.0).unwrap();
        let massive: Vec<usize> = (0..20).filter(|&i| h[i] > 0.1).collect();
        assert_eq!(massive, vec![0, 10, 19]);
        assert!((h[10] - 2.0 * h[0]).abs() < 1e-5);
    }

    #[test]
    fn heatmap_cases() {
        let p = vec![0.75, 0.25];
        let q = vec![0.5, 0.5];
        let hm = spectral_kl_heatmap(&[p.clone(), q.clone()]).unwrap();
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((hm.get(0, 1) - expected).abs() < 1e-15);
        assert!((expected - 0.1308).abs() < 1e-4);
        assert_eq!(hm.get(0, 0), 0.0);
        let same = spectral_kl_heatmap(&[p.clone(), p.clone()]).unwrap();
        assert_eq!(same, DenseMatrix::zeros(2, 2));
        assert!(spectral_kl_heatmap(&[p, vec![1.0]]).is_err());
    }
}
