mod common;

use proptest::prelude::*;
use rand::Rng;

use s2fgl::fl::{fedavg_aggregate, mean_std};
use s2fgl::gnn::{Backbone, ModelParams};
use s2fgl::graph::{louvain_partition, stratified_split, SplitRatios};
use s2fgl::losses::{
    aggregate_global_repository, fgma_loss_with_bases, fkd_loss, local_prototypes, similarity_basis, LocalPrototypes,
};
use s2fgl::ppr::{ppr, ppr_iterative, salc, select_top_k, sis};
use s2fgl::spectral::{
    laplacian, normalized_laplacian, project_value, sparse_self_similarity, structural_histogram, symmetric_eigen,
};
use s2fgl::tensor::tape::{kl_rows_value, softmax_rows_value};
use s2fgl::tensor::Tape;

use common::{random_graph, random_matrix, rng, sparse_graph};

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, r.gen_range(0..=i));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ppr_rows_are_stochastic(n in 2usize..30, p in 0.05f64..0.5, alpha in 0.05f64..0.99, seed: u64, loops: bool) {
        let g = random_graph(n, p, 1, 1, &mut rng(seed));
        let m = ppr(&g, alpha, loops).unwrap();
        for i in 0..n {
            let row = m.values.row(i);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn iterative_ppr_matches_direct(n in 1usize..30, p in 0.0f64..0.4, alpha in 0.05f64..0.99, seed: u64, loops: bool) {
        let g = sparse_graph(n, p, &mut rng(seed));
        let a = ppr(&g, alpha, loops).unwrap();
        let b = ppr_iterative(&g, alpha, loops, 1e-12).unwrap();
        prop_assert!(a.values.sub(&b.values).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn salc_is_permutation_equivariant(n in 2usize..25, seed: u64) {
        let g = random_graph(n, 0.2, 1, 2, &mut rng(seed));
        let perm = permutation(n, seed ^ 1);
        let pg = g.permuted(&perm).unwrap();
        let train: Vec<usize> = (0..n).filter(|u| u % 3 == 0).collect();
        let ptrain: Vec<usize> = train.iter().map(|&u| perm[u]).collect();
        let tau: Vec<f64> = (0..n).map(|u| 0.5 + (u % 4) as f64 * 0.25).collect();
        let mut ptau = vec![0.0; n];
        for u in 0..n {
            ptau[perm[u]] = tau[u];
        }
        let a = salc(&g, &train, 0.85, &tau).unwrap();
        let b = salc(&pg, &ptrain, 0.85, &ptau).unwrap();
        for (u, &p) in perm.iter().enumerate() {
            prop_assert!((a.salc[u] - b.salc[p]).abs() < 1e-10);
            prop_assert_eq!(a.salc[u], a.structural[u] + a.label_influence[u]);
        }
    }

    #[test]
    fn top_k_has_exact_size(n in 1usize..40, frac in 0.01f64..=1.0, seed: u64) {
        let g = random_graph(n.max(2), 0.2, 1, 1, &mut rng(seed));
        let s = salc(&g, &[0], 0.85, &vec![1.0; g.num_nodes()]).unwrap();
        let k = ((frac * g.num_nodes() as f64 + 1e-9).floor() as usize).max(1);
        let top = select_top_k(&s, frac).unwrap();
        prop_assert_eq!(top.len(), k);
        prop_assert_eq!(top, select_top_k(&s, frac).unwrap());
    }

    #[test]
    fn sis_grows_with_the_labeled_set(n in 3usize..30, seed: u64) {
        let g = random_graph(n, 0.2, 1, 1, &mut rng(seed));
        let p = ppr(&g, 0.85, false).unwrap();
        let small = sis(&p, &[0]).unwrap();
        let large = sis(&p, &[0, n / 2, n - 1]).unwrap();
        prop_assert!(small > 0.0);
        prop_assert!(large >= small);
        prop_assert!(large <= n as f64 + 1e-9);
    }

    #[test]
    fn partition_is_exhaustive_and_deterministic(n in 6usize..60, p in 0.02f64..0.3, k in 1usize..7, seed: u64) {
        let g = sparse_graph(n, p, &mut rng(seed));
        let plan = louvain_partition(&g, k, seed).unwrap();
        prop_assert_eq!(plan.num_clients, k);
        let members = plan.members();
        prop_assert!(members.iter().all(|m| !m.is_empty()));
        prop_assert_eq!(members.iter().map(Vec::len).sum::<usize>(), n);
        prop_assert_eq!(&plan, &louvain_partition(&g, k, seed).unwrap());
        for nodes in &members {
            let sub = g.induced_subgraph(nodes).unwrap();
            for &(u, v) in sub.graph.edges() {
                prop_assert!(g.has_edge(nodes[u], nodes[v]));
            }
        }
    }

    #[test]
    fn split_is_disjoint_reproducible_and_conserved(n in 10usize..80, k in 1usize..5, seed: u64) {
        let g = random_graph(n, 0.1, 1, 3, &mut rng(seed));
        let masks = stratified_split(&g, SplitRatios::default(), seed).unwrap();
        prop_assert_eq!(&masks, &stratified_split(&g, SplitRatios::default(), seed).unwrap());
        let mut seen = vec![false; n];
        for &u in masks.train.iter().chain(&masks.val).chain(&masks.test) {
            prop_assert!(!seen[u]);
            seen[u] = true;
        }
        let plan = louvain_partition(&g, k, seed).unwrap();
        let (mut train, mut test) = (0, 0);
        for nodes in plan.members() {
            let local = masks.restrict(&nodes);
            train += local.train.len();
            test += local.test.len();
        }
        prop_assert_eq!(train, masks.train.len());
        prop_assert_eq!(test, masks.test.len());
    }

    #[test]
    fn aggregating_identical_models_is_identity(k in 1usize..6, seed: u64, w in proptest::collection::vec(0.1f64..50.0, 6)) {
        let m = ModelParams::new(Backbone::Acm, 5, 4, 3, seed);
        let models = vec![m.clone(); k];
        let out = fedavg_aggregate(&models, &w[..k]).unwrap();
        prop_assert_eq!(out.flat_values(), m.flat_values());
    }

    #[test]
    fn fkd_is_nonnegative(n in 4usize..16, h in 2usize..6, seed: u64) {
        let mut r = rng(seed);
        let global = random_matrix(n, h, &mut r);
        let local = random_matrix(n, h, &mut r);
        let labels: Vec<Option<usize>> = (0..n).map(|u| Some(u % 2)).collect();
        let all: Vec<usize> = (0..n).collect();
        let protos = local_prototypes(&global, &labels, &all, 2).unwrap();
        let repo = aggregate_global_repository(&[protos], 1.0, 4, &mut r).unwrap();
        let mut t = Tape::new();
        let x = t.param(local);
        let l = fkd_loss(&mut t, x, &global, &repo, None, 1.0).unwrap();
        prop_assert!(t.scalar(l) >= 0.0);
        let y = t.param(global.clone());
        let zero = fkd_loss(&mut t, y, &global, &repo, None, 1.0).unwrap();
        prop_assert_eq!(t.scalar(zero), 0.0);
    }

    #[test]
    fn fgma_is_sign_and_permutation_invariant(n in 8usize..20, h in 2usize..6, seed: u64, flips: u8) {
        let mut r = rng(seed);
        let local = random_matrix(n, h, &mut r);
        let global = random_matrix(n, h, &mut r);
        let (k_sim, k_eig) = (4, 2);
        // Degenerate eigenvalues leave the basis undetermined within an eigenspace.
        for m in [&local, &global] {
            let vals = symmetric_eigen(&laplacian(&sparse_self_similarity(m, k_sim).unwrap())).unwrap().values;
            let gaps = vals.windows(2).enumerate().filter(|(i, _)| *i <= k_eig || *i + k_eig >= n - 1);
            prop_assume!(gaps.map(|(_, w)| w[1] - w[0]).all(|g| g > 1e-6));
        }
        let lb = similarity_basis(&local, k_sim, k_eig).unwrap().unwrap();
        let gb = similarity_basis(&global, k_sim, k_eig).unwrap().unwrap();
        let mut t = Tape::new();
        let x = t.param(local.clone());
        let base_v = fgma_loss_with_bases(&mut t, x, &lb, &global, &gb).unwrap();
        let base = t.scalar(base_v);
        prop_assert!(base >= 0.0);

        let mut flipped = lb.clone();
        for (i, v) in flipped.low_vecs.iter_mut().chain(flipped.high_vecs.iter_mut()).enumerate() {
            if flips >> i & 1 == 1 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let again_v = fgma_loss_with_bases(&mut t, x, &flipped, &global, &gb).unwrap();
        let again = t.scalar(again_v);
        prop_assert_eq!(base.to_bits(), again.to_bits());

        let perm = permutation(n, seed);
        let mut inverse = vec![0; n];
        for (u, &p) in perm.iter().enumerate() {
            inverse[p] = u;
        }
        let (pl, pgl) = (local.select_rows(&inverse), global.select_rows(&inverse));
        let plb = similarity_basis(&pl, k_sim, k_eig).unwrap().unwrap();
        let pgb = similarity_basis(&pgl, k_sim, k_eig).unwrap().unwrap();
        let px = t.param(pl);
        let permuted_v = fgma_loss_with_bases(&mut t, px, &plb, &pgl, &pgb).unwrap();
        let permuted = t.scalar(permuted_v);
        prop_assert!((permuted - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn projection_ignores_sign(n in 2usize..12, h in 1usize..5, seed: u64) {
        let mut r = rng(seed);
        let m = random_matrix(n, h, &mut r);
        let mut u: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        prop_assert_eq!(project_value(&m, &u).unwrap(), project_value(&m, &neg).unwrap());
    }

    #[test]
    fn histogram_ignores_relabeling(n in 3usize..25, seed: u64) {
        let g = random_graph(n, 0.2, 1, 1, &mut rng(seed));
        let pg = g.permuted(&permutation(n, seed)).unwrap();
        let (a, b) = (structural_histogram(&g, 10).unwrap(), structural_histogram(&pg, 10).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let l = normalized_laplacian(&g);
        prop_assert!(l.asymmetry() < 1e-12);
    }

    #[test]
    fn softmax_and_kl_are_well_behaved(rows in 1usize..6, cols in 1usize..6, seed: u64) {
        let mut r = rng(seed);
        let p = softmax_rows_value(&random_matrix(rows, cols, &mut r).scale(5.0));
        let q = softmax_rows_value(&random_matrix(rows, cols, &mut r));
        for i in 0..rows {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(kl_rows_value(&p, &p), 0.0);
        prop_assert!(kl_rows_value(&p, &q) >= -1e-12);
    }

    #[test]
    fn full_fraction_repository_ignores_the_rng(seed_a: u64, seed_b: u64) {
        let mut r = rng(7);
        let locals: Vec<LocalPrototypes> = (0..3)
            .map(|k| {
                let h = random_matrix(9, 3, &mut r);
                let labels: Vec<Option<usize>> = (0..9).map(|u| Some((u + k) % 3)).collect();
                local_prototypes(&h, &labels, &(0..9).collect::<Vec<_>>(), 3).unwrap()
            })
            .collect();
        let a = aggregate_global_repository(&locals, 1.0, 4, &mut rng(seed_a)).unwrap();
        let b = aggregate_global_repository(&locals, 1.0, 4, &mut rng(seed_b)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn std_matches_direct_sample_std(values in proptest::collection::vec(0.0f64..1.0, 2..8)) {
        let (mean, std) = mean_std(&values);
        let n = values.len() as f64;
        let direct_mean = values.iter().sum::<f64>() / n;
        let direct = (values.iter().map(|v| (v - direct_mean) * (v - direct_mean)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!((mean - direct_mean).abs() < 1e-15);
        prop_assert!((std - direct).abs() < 1e-12);
    }
}

#[test]
fn laplacian_rows_sum_to_zero_and_it_is_psd() {
    let mut r = rng(3);
    let h = random_matrix(25, 4, &mut r);
    let l = laplacian(&sparse_self_similarity(&h, 5).unwrap());
    for i in 0..25 {
        assert!(l.row(i).iter().sum::<f64>().abs() < 1e-10);
    }
    for _ in 0..50 {
        let x = random_matrix(25, 1, &mut r);
        let q = x.t_matmul(&l.matmul(&x).unwrap()).unwrap().item().unwrap();
        assert!(q >= -1e-12);
    }
}
