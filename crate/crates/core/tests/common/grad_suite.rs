//! Random finite-difference cases for every training loss.

use rand::Rng;

use s2fgl::gnn::{forward, forward_on_tape, Backbone, GraphOperators, ModelParams};
use s2fgl::losses::{
    aggregate_global_repository, fgma_loss_with_bases, local_prototypes, similarity_basis, total_loss,
    FkdTarget, LossWeights, PrototypeRepository,
};
use s2fgl::spectral::SpectralBasis;
use s2fgl::tensor::{DenseMatrix, Tape, Var};

use super::{random_graph, random_matrix, rng};

pub const TOLERANCE: f64 = 1e-4;

struct Instance {
    ops: GraphOperators,
    labels: Vec<usize>,
    train: Vec<usize>,
    model: ModelParams,
}

fn instance(seed: u64, backbone: Backbone) -> Instance {
    let mut r = rng(seed);
    let n = r.gen_range(8..=20);
    let classes = r.gen_range(2..=3);
    let g = random_graph(n, 0.25, 5, classes, &mut r);
    let hidden = r.gen_range(4..=8);
    let model = ModelParams::new(backbone, 5, hidden, classes, seed ^ 0xabc);
    let train: Vec<usize> = (0..n).filter(|u| u % 3 != 2).collect();
    let labels = train.iter().map(|&u| g.labels()[u].unwrap()).collect();
    Instance {
        ops: GraphOperators::new(&g, backbone),
        labels,
        train,
        model,
    }
}

fn model_values(m: &ModelParams) -> Vec<DenseMatrix> {
    m.params.iter().map(|p| p.value.clone()).collect()
}

fn with_values(m: &ModelParams, values: &[DenseMatrix]) -> ModelParams {
    let mut out = m.clone();
    for (p, v) in out.params.iter_mut().zip(values) {
        p.value = v.clone();
    }
    out
}

/// Repository from three disjoint node groups, half of the holders per anchor.
fn repository(hidden: &DenseMatrix, classes: usize, seed: u64) -> PrototypeRepository {
    let n = hidden.rows();
    let labels: Vec<Option<usize>> = (0..n).map(|u| Some(u % classes)).collect();
    let locals: Vec<_> = (0..3)
        .map(|k| {
            let nodes: Vec<usize> = (0..n).filter(|u| u % 3 == k).collect();
            local_prototypes(hidden, &labels, &nodes, classes).unwrap()
        })
        .collect();
    aggregate_global_repository(&locals, 0.5, 4, &mut rng(seed)).unwrap()
}

pub fn cross_entropy_case(seed: u64, backbone: Backbone) -> f64 {
    let inst = instance(seed, backbone);
    super::gradient_error(&model_values(&inst.model), &|vals| {
        let mut tape = Tape::new();
        let model = with_values(&inst.model, vals);
        let fv = forward_on_tape(&mut tape, &model, &inst.ops).unwrap();
        let loss = tape.cross_entropy(fv.logits, &inst.labels, &inst.train).unwrap();
        (tape, loss, fv.params)
    })
}

pub fn fkd_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, h, classes) = (r.gen_range(6..=20), r.gen_range(3..=8), 3);
    let global = random_matrix(n, h, &mut r);
    let local = random_matrix(n, h, &mut r);
    let repo = repository(&global, classes, seed);
    let nodes: Vec<usize> = (0..n).step_by(2).collect();
    let target = FkdTarget::new(&global, &repo, Some(&nodes), 0.7).unwrap();
    super::gradient_error(&[local], &|vals| {
        let mut tape = Tape::new();
        let x = tape.param(vals[0].clone());
        let loss = target.loss(&mut tape, x).unwrap();
        (tape, loss, vec![x])
    })
}

fn basis(hidden: &DenseMatrix) -> SpectralBasis {
    similarity_basis(hidden, 4, 2).unwrap().expect("large enough")
}

pub fn fgma_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, h) = (r.gen_range(8..=20), r.gen_range(3..=8));
    let global = random_matrix(n, h, &mut r);
    let local = random_matrix(n, h, &mut r);
    let (lb, gb) = (basis(&local), basis(&global));
    super::gradient_error(&[local], &|vals| {
        let mut tape = Tape::new();
        let x = tape.param(vals[0].clone());
        let loss = fgma_loss_with_bases(&mut tape, x, &lb, &global, &gb).unwrap();
        (tape, loss, vec![x])
    })
}

/// `CE + λ₁·FKD + λ₂·FGMA` through the full model, with the frozen global
/// side taken from a second model on the same graph.
pub fn composed_case(seed: u64, backbone: Backbone) -> f64 {
    let inst = instance(seed, backbone);
    let global_model = ModelParams::new(backbone, 5, inst.model.hidden, inst.model.classes, seed ^ 0xdef);
    let global_hidden = forward(&global_model, &inst.ops).unwrap().hidden;
    let repo = repository(&global_hidden, inst.model.classes, seed);
    let fkd = FkdTarget::new(&global_hidden, &repo, None, 1.0).unwrap();
    let local_hidden = forward(&inst.model, &inst.ops).unwrap().hidden;
    let (lb, gb) = (basis(&local_hidden), basis(&global_hidden));
    let weights = LossWeights::new(10.0, 0.5).unwrap();
    super::gradient_error(&model_values(&inst.model), &|vals| {
        let mut tape = Tape::new();
        let model = with_values(&inst.model, vals);
        let fv = forward_on_tape(&mut tape, &model, &inst.ops).unwrap();
        let ce = tape.cross_entropy(fv.logits, &inst.labels, &inst.train).unwrap();
        let k = fkd.loss(&mut tape, fv.hidden).unwrap();
        let a = fgma_loss_with_bases(&mut tape, fv.hidden, &lb, &global_hidden, &gb).unwrap();
        let loss: Var = total_loss(&mut tape, ce, Some(k), Some(a), weights).unwrap();
        (tape, loss, fv.params)
    })
}

/// Worst relative error of each loss over `cases` random instances.
pub fn run(cases: u64) -> Vec<(&'static str, f64)> {
    let worst = |f: &dyn Fn(u64) -> f64| (0..cases).map(f).fold(0.0, f64::max);
    vec![
        ("cross-entropy (gcn)", worst(&|s| cross_entropy_case(s, Backbone::Gcn))),
        ("cross-entropy (acm)", worst(&|s| cross_entropy_case(s, Backbone::Acm))),
        ("fkd", worst(&fkd_case)),
        ("fgma", worst(&fgma_case)),
        ("composed (gcn)", worst(&|s| composed_case(s, Backbone::Gcn))),
        ("composed (acm)", worst(&|s| composed_case(s, Backbone::Acm))),
    ]
}
