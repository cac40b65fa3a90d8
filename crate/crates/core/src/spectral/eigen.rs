use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Largest tolerated `|a_ij − a_ji|`, relative to `max(1, max|a|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Full eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector of `values[k]`, sign-normalized so
    /// its largest-magnitude entry is positive (lowest index on ties).
    pub vectors: DenseMatrix,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k)
    }

    /// `U Λ Uᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            for (k, x) in scaled.row_mut(i).iter_mut().enumerate() {
                *x *= self.values[k];
            }
        }
        scaled.matmul_t(&self.vectors).expect("square factors")
    }
}

fn rotate_rows(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub fn symmetric_eigen(m: &DenseMatrix) -> Result<SymmetricEigen> {
    if !m.is_square() {
        return Err(Error::Dimension {
            op: "symmetric_eigen",
            left: m.shape(),
            right: m.shape(),
        });
    }
    let scale = m.max_abs().max(1.0);
    if m.asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {:e})",
            m.asymmetry()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("symmetric_eigen"));
    }
    let n = m.rows();
    let mut a = m.clone();
    // Row k of `vt` is eigenvector k, so rotations touch contiguous rows only.
    let mut vt = DenseMatrix::identity(n);
    let frob = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let target = 1e-14 * frob;

    let mut sweeps = 0;
    let mut off = off_diagonal_norm(&a);
    let mut previous = f64::INFINITY;
    let mut row_p = vec![0.0; n];
    let mut row_q = vec![0.0; n];
    // Stop at roundoff level, or once progress stalls below the 1e-10 threshold.
    while off > target && !(off >= previous && off <= 1e-10 * frob) {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NotConverged {
                op: "symmetric_eigen",
                iterations: sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                row_p.copy_from_slice(a.row(p));
                row_q.copy_from_slice(a.row(q));
                for k in 0..n {
                    let (x, y) = (row_p[k], row_q[k]);
                    row_p[k] = c * x - s * y;
                    row_q[k] = s * x + c * y;
                }
                row_p[p] = app - t * apq;
                row_q[q] = aqq + t * apq;
                row_p[q] = 0.0;
                row_q[p] = 0.0;
                a.row_mut(p).copy_from_slice(&row_p);
                a.row_mut(q).copy_from_slice(&row_q);
                for k in 0..n {
                    a.set(k, p, row_p[k]);
                    a.set(k, q, row_q[k]);
                }
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        previous = off;
        off = off_diagonal_norm(&a);
    }
    let v = vt.transpose();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a.get(x, x).total_cmp(&a.get(y, y)).then(x.cmp(&y)));
    let values: Vec<f64> = order.iter().map(|&k| a.get(k, k)).collect();
    let mut vectors = v.select_cols(&order);
    for k in 0..n {
        let col = vectors.column(k);
        if sign_flip_needed(&col) {
            for i in 0..n {
                let x = vectors.get(i, k);
                vectors.set(i, k, -x);
            }
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn sign_flip_needed(v: &[f64]) -> bool {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    v.get(best).is_some_and(|&x| x < 0.0)
}

/// Flips `v` so its largest-magnitude entry is positive.
pub fn normalize_sign(v: &mut [f64]) {
    if sign_flip_needed(v) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
