//! Personalized PageRank, the structure inertia score (SIS) and
//! structure-aware label centrality (SALC) node selection.
//!
//! `P = α (I − (1−α) W)^{-1}` with `W = D^{-1}A`. Rows of `W` for degree-0
//! nodes are zero, so an isolated node keeps mass `α` on itself. With
//! `self_loops` the walk runs on `A + I` instead.

use crate::error::{Error, Result};
use crate::graph::{Graph, PartitionPlan, SplitMasks};
use crate::tensor::DenseMatrix;

/// Node count above which [`ppr_auto`] switches to the iterative solver.
pub const DIRECT_SOLVE_LIMIT: usize = 3000;
pub const DEFAULT_DAMPING: f64 = 0.85;
pub const ITERATIVE_TOL: f64 = 1e-8;
const MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct PprMatrix {
    pub values: DenseMatrix,
    pub damping_alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("damping must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Row-normalized neighbor lists of `A` (or `A + I`).
fn walk(g: &Graph, self_loops: bool) -> Vec<Vec<(usize, f64)>> {
    (0..g.num_nodes())
        .map(|u| {
            let mut nbrs: Vec<usize> = g.neighbors(u).to_vec();
            if self_loops {
                nbrs.push(u);
                nbrs.sort_unstable();
            }
            let w = if nbrs.is_empty() { 0.0 } else { 1.0 / nbrs.len() as f64 };
            nbrs.into_iter().map(|v| (v, w)).collect()
        })
        .collect()
}

/// Reference PPR by a dense solve of `(I − (1−α)W) X = αI`.
pub fn ppr(g: &Graph, damping_alpha: f64, self_loops: bool) -> Result<PprMatrix> {
    check_alpha(damping_alpha)?;
    let n = g.num_nodes();
    if damping_alpha == 1.0 {
        return Ok(PprMatrix {
            values: DenseMatrix::identity(n),
            damping_alpha,
        });
    }
    let mut system = DenseMatrix::identity(n);
    for (u, row) in walk(g, self_loops).into_iter().enumerate() {
        for (v, w) in row {
            system.add_at(u, v, -(1.0 - damping_alpha) * w);
        }
    }
    let rhs = DenseMatrix::identity(n).scale(damping_alpha);
    let values = system.solve(&rhs)?;
    Ok(PprMatrix {
        values,
        damping_alpha,
    })
}

/// Fixed-point iteration `X ← αI + (1−α) W X` until `‖ΔX‖_∞ < tol`.
pub fn ppr_iterative(g: &Graph, damping_alpha: f64, self_loops: bool, tol: f64) -> Result<PprMatrix> {
    check_alpha(damping_alpha)?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be > 0, got {tol}")));
    }
    let n = g.num_nodes();
    let w = walk(g, self_loops);
    let base = DenseMatrix::identity(n).scale(damping_alpha);
    let mut x = base.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let mut next = base.clone();
        for (u, row) in w.iter().enumerate() {
            let out = next.row_mut(u);
            for &(v, wt) in row {
                let f = (1.0 - damping_alpha) * wt;
                for (o, &xv) in out.iter_mut().zip(x.row(v)) {
                    *o += f * xv;
                }
            }
        }
        residual = next.sub(&x)?.max_abs();
        x = next;
        if residual < tol {
            return Ok(PprMatrix {
                values: x,
                damping_alpha,
            });
        }
    }
    Err(Error::NotConverged {
        op: "ppr_iterative",
        iterations: MAX_ITERATIONS,
        residual,
    })
}

/// Direct solve up to `DIRECT_SOLVE_LIMIT` nodes, iterative above.
pub fn ppr_auto(g: &Graph, damping_alpha: f64, self_loops: bool) -> Result<PprMatrix> {
    if g.num_nodes() > DIRECT_SOLVE_LIMIT {
        ppr_iterative(g, damping_alpha, self_loops, ITERATIVE_TOL)
    } else {
        ppr(g, damping_alpha, self_loops)
    }
}

/// `Σ_i max_{j ∈ train} P[i][j]`.
pub fn sis(p: &PprMatrix, train_mask: &[usize]) -> Result<f64> {
    if train_mask.is_empty() {
        return Err(Error::invalid("sis: empty training mask"));
    }
    let v = &p.values;
    if let Some(&bad) = train_mask.iter().find(|&&j| j >= v.cols()) {
        return Err(Error::invalid(format!("sis: node {bad} out of range")));
    }
    Ok((0..v.rows())
        .map(|i| {
            train_mask
                .iter()
                .map(|&j| v.get(i, j))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum())
}

/// SIS of every client on its induced subgraph.
pub fn sis_per_client(g: &Graph, plan: &PartitionPlan, masks: &SplitMasks, damping_alpha: f64) -> Result<Vec<f64>> {
    plan.members()
        .iter()
        .enumerate()
        .map(|(c, nodes)| {
            let sub = g.induced_subgraph(nodes)?;
            let local = masks.restrict(&sub.original_ids);
            if local.train.is_empty() {
                log::warn!("client {c} has no training node; SIS contribution 0");
                return Ok(0.0);
            }
            let p = ppr_auto(&sub.graph, damping_alpha, false)?;
            sis(&p, &local.train)
        })
        .collect()
}

/// Sum of per-client SIS values.
pub fn sis_partitioned(g: &Graph, plan: &PartitionPlan, masks: &SplitMasks, damping_alpha: f64) -> Result<f64> {
    Ok(sis_per_client(g, plan, masks, damping_alpha)?.iter().sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralityScores {
    /// `Λ^s_u = max_v P̃[u][v]·τ_v`.
    pub structural: Vec<f64>,
    /// `Λ^l_u = Σ_{v labeled} P̃^(L)[v][u]`.
    pub label_influence: Vec<f64>,
    pub salc: Vec<f64>,
    pub prior_tau: Vec<f64>,
}

pub fn salc(g: &Graph, train_mask: &[usize], damping_alpha: f64, tau: &[f64]) -> Result<CentralityScores> {
    let n = g.num_nodes();
    if tau.len() != n {
        return Err(Error::invalid(format!("salc: {} priors for {n} nodes", tau.len())));
    }
    if tau.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::invalid("salc: priors must be >= 0"));
    }
    let plain = ppr_auto(g, damping_alpha, false)?;
    let looped = ppr_auto(g, damping_alpha, true)?;
    let structural: Vec<f64> = (0..n)
        .map(|u| {
            (0..n)
                .map(|v| plain.values.get(u, v) * tau[v])
                .fold(0.0, f64::max)
        })
        .collect();
    let mut label_influence = vec![0.0; n];
    for &v in train_mask {
        for (u, acc) in label_influence.iter_mut().enumerate() {
            *acc += looped.values.get(v, u);
        }
    }
    let salc = structural.iter().zip(&label_influence).map(|(s, l)| s + l).collect();
    Ok(CentralityScores {
        structural,
        label_influence,
        salc,
        prior_tau: tau.to_vec(),
    })
}

/// The `max(1, floor(k_fraction·N))` nodes with the highest SALC score,
/// ties broken by lower id, in rank order.
pub fn select_top_k(scores: &CentralityScores, k_fraction: f64) -> Result<Vec<usize>> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::invalid(format!("k_fraction must lie in (0, 1], got {k_fraction}")));
    }
    let n = scores.salc.len();
    let k = ((k_fraction * n as f64 + 1e-9).floor() as usize).max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.salc[b].total_cmp(&scores.salc[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.to_vec(), DenseMatrix::zeros(n, 1), vec![None; n], 1).unwrap()
    }

    #[test]
    fn damping_one_is_identity() {
        let g = plain(3, &[(0, 1), (1, 2)]);
        assert_eq!(ppr(&g, 1.0, false).unwrap().values, DenseMatrix::identity(3));
        assert_eq!(ppr_iterative(&g, 1.0, false, 1e-10).unwrap().values, DenseMatrix::identity(3));
    }

    #[test]
    fn edgeless_graph_keeps_alpha_on_diagonal() {
        let g = plain(3, &[]);
        let expected = DenseMatrix::identity(3).scale(0.85);
        assert_eq!(ppr_iterative(&g, 0.85, false, 1e-10).unwrap().values, expected);
        assert!(ppr(&g, 0.85, false).unwrap().values.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn two_node_path_with_self_loops() {
        let g = plain(2, &[(0, 1)]);
        let p = ppr(&g, 0.85, true).unwrap().values;
        let expected = DenseMatrix::from_rows(&[vec![0.925, 0.075], vec![0.075, 0.925]]).unwrap();
        assert!(p.sub(&expected).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn two_node_sis_values() {
        let g = plain(2, &[(0, 1)]);
        let p = ppr(&g, 0.85, false).unwrap();
        assert!((sis(&p, &[0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((sis(&p, &[1]).unwrap() - 1.0).abs() < 1e-12);
        assert!(sis(&p, &[]).is_err());
        let id = ppr(&g, 1.0, false).unwrap();
        assert_eq!(sis(&id, &[0, 1]).unwrap(), 2.0);
    }

    #[test]
    fn invalid_damping() {
        let g = plain(2, &[(0, 1)]);
        assert!(ppr(&g, 0.0, false).is_err());
        assert!(ppr(&g, 1.5, false).is_err());
        assert!(ppr_iterative(&g, 0.5, false, 0.0).is_err());
    }

    #[test]
    fn salc_edge_cases() {
        let g = plain(3, &[(0, 1), (1, 2)]);
        let s = salc(&g, &[], 0.85, &[1.0; 3]).unwrap();
        assert_eq!(s.label_influence, vec![0.0; 3]);
        assert_eq!(s.salc, s.structural);
        let z = salc(&g, &[1], 0.85, &[0.0; 3]).unwrap();
        assert_eq!(z.structural, vec![0.0; 3]);
        assert!(salc(&g, &[1], 0.85, &[1.0; 2]).is_err());
    }

    #[test]
    fn top_k_floor_and_ties() {
        let flat = CentralityScores {
            structural: vec![0.0; 9],
            label_influence: vec![0.0; 9],
            salc: vec![1.0; 9],
            prior_tau: vec![1.0; 9],
        };
        assert_eq!(select_top_k(&flat, 1.0 / 3.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_top_k(&flat, 0.01).unwrap(), vec![0]);
        assert!(select_top_k(&flat, 0.0).is_err());
        let mut ranked = flat.clone();
        ranked.salc = vec![0.1, 0.5, 0.5, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(select_top_k(&ranked, 1.0 / 3.0).unwrap(), vec![3, 1, 2]);
    }
}
