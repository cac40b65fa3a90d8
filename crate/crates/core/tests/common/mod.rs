#![allow(dead_code)]

pub mod grad_suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s2fgl::config::{ConfigBuilder, ExperimentConfig};
use s2fgl::graph::Graph;
use s2fgl::tensor::{DenseMatrix, Tape, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Erdős–Rényi graph with a ring added so no node is isolated.
pub fn random_graph(n: usize, p: f64, dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if v == u + 1 || (u == 0 && v == n - 1 && n > 2) || rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = random_matrix(n, dim, rng);
    let labels = (0..n).map(|u| Some(u % classes)).collect();
    Graph::new(n, edges, features, labels, classes).unwrap()
}

/// A graph whose edges are sampled independently, isolated nodes allowed.
pub fn sparse_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges, DenseMatrix::zeros(n, 1), vec![None; n], 1).unwrap()
}

/// `build` records the leaves for `values` on a fresh tape and returns the
/// tape, the scalar loss and the leaves. Returns the relative error of the
/// autodiff gradient against central differences with step `1e-5`.
/// Records a loss for the given leaf values: the tape, the loss and the leaves.
pub type LossBuilder<'a> = &'a dyn Fn(&[DenseMatrix]) -> (Tape, Var, Vec<Var>);

pub fn gradient_error(values: &[DenseMatrix], build: LossBuilder) -> f64 {
    let (tape, loss, leaves) = build(values);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = leaves
        .iter()
        .zip(values)
        .flat_map(|(&v, m)| match grads.get(v) {
            Some(g) => g.as_slice().to_vec(),
            None => vec![0.0; m.len()],
        })
        .collect();
    let h = 1e-5;
    let eval = |vals: &[DenseMatrix]| {
        let (t, l, _) = build(vals);
        t.scalar(l)
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work = values.to_vec();
    for k in 0..values.len() {
        for i in 0..values[k].len() {
            let x = values[k].as_slice()[i];
            work[k].as_mut_slice()[i] = x + h;
            let up = eval(&work);
            work[k].as_mut_slice()[i] = x - h;
            let down = eval(&work);
            work[k].as_mut_slice()[i] = x;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = numeric.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

pub fn config(text: &str) -> ExperimentConfig {
    ConfigBuilder::new().text(text).unwrap().build().unwrap()
}

/// 200-node, 4-block SBM federation used by the short training tests;
/// `extra` is layered on top.
pub fn small_sbm(extra: &str) -> ExperimentConfig {
    ConfigBuilder::new()
        .text(
            "sbm_blocks = 50,50,50,50\nsbm_p_in = 0.1\nsbm_p_out = 0.01\nsbm_feature_dim = 16\n\
             num_clients = 4\nhidden = 16\nrounds = 10\nseeds = 0\n",
        )
        .unwrap()
        .text(extra)
        .unwrap()
        .build()
        .unwrap()
}
