//! Simulated federation: client setup, round orchestration, aggregation and
//! evaluation.
//!
//! Clients in a round train in parallel on private copies of the broadcast
//! model. Results are collected in client-id order before aggregation, so
//! the outcome never depends on thread scheduling.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::gnn::{forward, forward_on_tape, predict, GraphOperators, ModelParams};
use crate::graph::{louvain_partition, stratified_split, Graph, SplitMasks, Subgraph};
use crate::losses::{
    aggregate_global_repository, local_prototypes, total_loss, FgmaTarget, FkdTarget, LocalPrototypes, LossWeights,
    PrototypeRepository,
};
use crate::ppr::{salc, select_top_k, sis_partitioned};
use crate::rng::{derive_seed, stream};
use crate::tensor::{sgd_step, Tape, Var};

/// Number of trailing rounds averaged into the final accuracy.
pub const FINAL_WINDOW: usize = 5;

pub struct ClientState {
    pub client_id: usize,
    pub subgraph: Graph,
    pub original_ids: Vec<usize>,
    pub masks: SplitMasks,
    pub model: ModelParams,
    /// Centrality-selected local node ids, in rank order.
    pub selected_nodes: Vec<usize>,
    pub seed: u64,
    ops: GraphOperators,
    /// Label of each train-mask node, aligned with `masks.train`.
    train_targets: Vec<usize>,
    /// Ground-truth labels of train nodes only.
    train_labels: Vec<Option<usize>>,
}

impl ClientState {
    pub fn new(
        client_id: usize,
        sub: Subgraph,
        global_masks: &SplitMasks,
        model: ModelParams,
        damping_alpha: f64,
        k_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let Subgraph { graph, original_ids } = sub;
        let masks = global_masks.restrict(&original_ids);
        let n = graph.num_nodes();
        let scores = salc(&graph, &masks.train, damping_alpha, &vec![1.0; n])?;
        let selected_nodes = select_top_k(&scores, k_fraction)?;
        let mut train_labels = vec![None; n];
        let mut train_targets = Vec::with_capacity(masks.train.len());
        for &u in &masks.train {
            let label = graph.labels()[u].ok_or_else(|| Error::Graph(format!("train node {u} is unlabeled")))?;
            train_labels[u] = Some(label);
            train_targets.push(label);
        }
        Ok(Self {
            client_id,
            ops: GraphOperators::new(&graph, model.backbone),
            subgraph: graph,
            original_ids,
            masks,
            model,
            selected_nodes,
            seed,
            train_targets,
            train_labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.subgraph.num_nodes()
    }

    pub fn operators(&self) -> &GraphOperators {
        &self.ops
    }
}

pub struct ServerState {
    pub global_model: ModelParams,
    /// `None` until the first aggregation.
    pub repository: Option<PrototypeRepository>,
    pub round: usize,
    /// Partitioned structure inertia score of the federation.
    pub sis: f64,
}

/// Per-round knobs shared by every client.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundSettings {
    pub method: Method,
    pub weights: LossWeights,
    pub mu: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub local_epochs: usize,
    pub k_sim: usize,
    pub k_eig: usize,
    pub proto_fraction: f64,
    pub anchors_per_class: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl RoundSettings {
    pub fn from_config(cfg: &ExperimentConfig, seed: u64) -> Self {
        Self {
            method: cfg.method,
            weights: cfg.loss_weights(),
            mu: cfg.mu,
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            local_epochs: cfg.local_epochs,
            k_sim: cfg.k_sim,
            k_eig: cfg.k_eig,
            proto_fraction: cfg.proto_fraction,
            anchors_per_class: cfg.anchors_per_class,
            temperature: cfg.temperature,
            seed,
        }
    }

    fn uses_prox(&self) -> bool {
        self.method == Method::FedProx && self.mu != 0.0
    }
}

/// Loss components from a client's last local epoch. Absent terms are `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClientLosses {
    pub client_id: usize,
    pub num_nodes: usize,
    pub train_nodes: usize,
    pub ce: Option<f64>,
    pub fkd: Option<f64>,
    pub fgma: Option<f64>,
    pub prox: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientLosses>,
    pub test_accuracy: f64,
    pub sis: f64,
    /// Wall-clock duration; excluded from serialized reports.
    #[serde(skip)]
    pub wall_ms: f64,
}

/// Weighted mean of client models, computed as `m₀ + Σᵢ (wᵢ/W)(mᵢ − m₀)` in
/// client order so identical inputs return bitwise-identical output.
pub fn fedavg_aggregate(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = models.first().ok_or_else(|| Error::invalid("fedavg_aggregate: no models"))?;
    if weights.len() != models.len() {
        return Err(Error::invalid("fedavg_aggregate: one weight per model required"));
    }
    if models.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::invalid("fedavg_aggregate: model shapes differ"));
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid("fedavg_aggregate: weights must be finite and >= 0"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("fedavg_aggregate: weights sum to zero"));
    }
    let mut out = first.clone();
    out.zero_grad();
    for (m, &w) in models.iter().zip(weights).skip(1) {
        let share = w / total;
        for (dst, (src, base)) in out.params.iter_mut().zip(m.params.iter().zip(&first.params)) {
            for (d, (&s, &b)) in dst.value.as_mut_slice().iter_mut().zip(src.value.as_slice().iter().zip(base.value.as_slice())) {
                *d += share * (s - b);
            }
        }
    }
    Ok(out)
}

/// `(μ/2)·Σ‖w − w_g‖²` over all parameter matrices.
pub fn fedprox_regularizer(tape: &mut Tape, local: &[Var], global: &ModelParams, mu: f64) -> Result<Var> {
    if local.len() != global.params.len() {
        return Err(Error::invalid("fedprox_regularizer: parameter counts differ"));
    }
    let mut total: Option<Var> = None;
    for (&w, g) in local.iter().zip(&global.params) {
        let anchor = tape.constant(g.value.clone());
        let diff = tape.sub(w, anchor)?;
        let sq = tape.sum_squares(diff)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, sq)?,
            None => sq,
        });
    }
    let total = total.ok_or_else(|| Error::invalid("fedprox_regularizer: empty model"))?;
    tape.scale(total, mu / 2.0)
}

/// Correct test predictions and test-node count of `model` on one client.
pub fn client_test_counts(model: &ModelParams, client: &ClientState) -> Result<(usize, usize)> {
    if client.masks.test.is_empty() {
        return Ok((0, 0));
    }
    let pred = predict(&forward(model, &client.ops)?.logits);
    let labels = client.subgraph.labels();
    let correct = client.masks.test.iter().filter(|&&u| labels[u] == Some(pred[u])).count();
    Ok((correct, client.masks.test.len()))
}

/// Micro accuracy of `model` over every client's test nodes.
pub fn evaluate(model: &ModelParams, clients: &[ClientState]) -> Result<f64> {
    let counts = clients
        .par_iter()
        .map(|c| client_test_counts(model, c))
        .collect::<Result<Vec<_>>>()?;
    let (correct, total) = counts.iter().fold((0, 0), |(a, b), &(c, t)| (a + c, b + t));
    if total == 0 {
        return Err(Error::invalid("evaluate: no test nodes on any client"));
    }
    Ok(correct as f64 / total as f64)
}

struct ClientUpdate {
    model: ModelParams,
    prototypes: Option<LocalPrototypes>,
    losses: ClientLosses,
}

fn local_update(
    client: &ClientState,
    global: &ModelParams,
    repository: Option<&PrototypeRepository>,
    s: &RoundSettings,
    round: usize,
) -> Result<ClientUpdate> {
    let diverged = |e: Error| match e {
        Error::NonFinite(op) => Error::Diverged(format!(
            "client {} round {round}: non-finite value in `{op}`",
            client.client_id
        )),
        other => other,
    };
    let mut model = global.clone();
    let needs_global_hidden = s.weights.lambda1 != 0.0 || s.weights.lambda2 != 0.0;
    let global_hidden = if needs_global_hidden {
        Some(forward(global, &client.ops)?.hidden)
    } else {
        None
    };
    let prototypes = match (&global_hidden, s.weights.lambda1 != 0.0) {
        (Some(h), true) => Some(local_prototypes(
            h,
            &client.train_labels,
            &client.selected_nodes,
            global.classes,
        )?),
        _ => None,
    };
    let fkd = match (&global_hidden, repository) {
        (Some(h), Some(repo)) if s.weights.lambda1 != 0.0 && repo.num_present() > 0 => {
            Some(FkdTarget::new(h, repo, None, s.temperature)?)
        }
        _ => None,
    };
    let fgma = match &global_hidden {
        Some(h) if s.weights.lambda2 != 0.0 => FgmaTarget::new(h, s.k_sim, s.k_eig)?,
        _ => None,
    };
    let mut losses = ClientLosses {
        client_id: client.client_id,
        num_nodes: client.num_nodes(),
        train_nodes: client.masks.train.len(),
        ce: None,
        fkd: None,
        fgma: None,
        prox: None,
    };
    if client.masks.train.is_empty() {
        log::warn!("client {} has no training nodes; it returns the global model", client.client_id);
        return Ok(ClientUpdate { model, prototypes, losses });
    }
    for _ in 0..s.local_epochs {
        let mut tape = Tape::new();
        let vars = forward_on_tape(&mut tape, &model, &client.ops).map_err(diverged)?;
        let ce = tape
            .cross_entropy(vars.logits, &client.train_targets, &client.masks.train)
            .map_err(diverged)?;
        let fkd_var = fkd.as_ref().map(|t| t.loss(&mut tape, vars.hidden)).transpose().map_err(diverged)?;
        let fgma_var = fgma.as_ref().map(|t| t.loss(&mut tape, vars.hidden)).transpose().map_err(diverged)?;
        let mut total = total_loss(&mut tape, ce, fkd_var, fgma_var, s.weights).map_err(diverged)?;
        let mut prox_var = None;
        if s.uses_prox() {
            let p = fedprox_regularizer(&mut tape, &vars.params, global, s.mu).map_err(diverged)?;
            total = tape.add(total, p).map_err(diverged)?;
            prox_var = Some(p);
        }
        losses.ce = Some(tape.scalar(ce));
        losses.fkd = fkd_var.map(|v| tape.scalar(v));
        losses.fgma = fgma_var.map(|v| tape.scalar(v));
        losses.prox = prox_var.map(|v| tape.scalar(v));
        let mut grads = tape.backward(total).map_err(diverged)?;
        model.zero_grad();
        for (p, &v) in model.params.iter_mut().zip(&vars.params) {
            if let Some(g) = grads.take(v) {
                p.accumulate(&g)?;
            }
        }
        sgd_step(&mut model.params, s.lr, s.weight_decay)?;
        if model.params.iter().any(|p| !p.value.is_finite()) {
            return Err(Error::Diverged(format!(
                "client {} round {round}: parameters became non-finite",
                client.client_id
            )));
        }
    }
    model.zero_grad();
    Ok(ClientUpdate { model, prototypes, losses })
}

/// Broadcast, local training, aggregation of models and prototypes, then
/// evaluation of the new global model.
pub fn run_round(server: &mut ServerState, clients: &mut [ClientState], s: &RoundSettings) -> Result<RoundReport> {
    let start = Instant::now();
    let round = server.round + 1;
    let global = &server.global_model;
    let repo = server.repository.as_ref();
    let updates = clients
        .par_iter()
        .map(|c| local_update(c, global, repo, s, round))
        .collect::<Result<Vec<_>>>()?;
    let mut models = Vec::with_capacity(updates.len());
    let mut weights = Vec::with_capacity(updates.len());
    let mut locals = Vec::new();
    let mut losses = Vec::with_capacity(updates.len());
    for (client, update) in clients.iter_mut().zip(updates) {
        client.model = update.model.clone();
        weights.push(client.num_nodes() as f64);
        models.push(update.model);
        locals.extend(update.prototypes);
        losses.push(update.losses);
    }
    server.global_model = fedavg_aggregate(&models, &weights)?;
    if !locals.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, &[stream::PROTOTYPES, round as u64]));
        server.repository = Some(aggregate_global_repository(
            &locals,
            s.proto_fraction,
            s.anchors_per_class,
            &mut rng,
        )?);
    }
    server.round = round;
    let test_accuracy = evaluate(&server.global_model, clients)?;
    Ok(RoundReport {
        round,
        clients: losses,
        test_accuracy,
        sis: server.sis,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// A freshly initialized federation for one seed.
pub struct Federation {
    pub graph: Graph,
    pub masks: SplitMasks,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub settings: RoundSettings,
}

impl Federation {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let graph = cfg.dataset.load(derive_seed(seed, &[stream::DATASET]))?;
        Self::from_graph(cfg, graph, seed)
    }

    pub fn from_graph(cfg: &ExperimentConfig, graph: Graph, seed: u64) -> Result<Self> {
        let masks = stratified_split(&graph, cfg.split, derive_seed(seed, &[stream::SPLIT]))?;
        let plan = louvain_partition(&graph, cfg.num_clients, derive_seed(seed, &[stream::PARTITION]))?;
        let sis = sis_partitioned(&graph, &plan, &masks, cfg.damping_alpha)?;
        let (d, c) = (graph.feature_dim(), graph.num_classes());
        let clients = plan
            .members()
            .into_par_iter()
            .enumerate()
            .map(|(id, nodes)| {
                let client_seed = derive_seed(seed, &[stream::MODEL_INIT, id as u64 + 1]);
                let model = ModelParams::new(cfg.backbone, d, cfg.hidden, c, client_seed);
                ClientState::new(
                    id,
                    graph.induced_subgraph(&nodes)?,
                    &masks,
                    model,
                    cfg.damping_alpha,
                    cfg.k_fraction,
                    client_seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if cfg.loss_weights().lambda2 != 0.0 {
            for c in clients.iter().filter(|c| c.num_nodes() < 2 * cfg.k_eig) {
                log::warn!(
                    "client {} has {} nodes, fewer than 2·k_eig; spectral alignment is skipped there",
                    c.client_id,
                    c.num_nodes()
                );
            }
        }
        let server = ServerState {
            global_model: ModelParams::new(cfg.backbone, d, cfg.hidden, c, derive_seed(seed, &[stream::MODEL_INIT])),
            repository: None,
            round: 0,
            sis,
        };
        Ok(Self {
            graph,
            masks,
            server,
            clients,
            settings: RoundSettings::from_config(cfg, seed),
        })
    }

    pub fn step(&mut self) -> Result<RoundReport> {
        run_round(&mut self.server, &mut self.clients, &self.settings)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub reports: Vec<RoundReport>,
    pub final_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub runs: Vec<SeedRun>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

/// Mean test accuracy over the last [`FINAL_WINDOW`] rounds.
pub fn final_accuracy(reports: &[RoundReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::invalid("final_accuracy: no rounds"));
    }
    let tail = &reports[reports.len().saturating_sub(FINAL_WINDOW)..];
    Ok(tail.iter().map(|r| r.test_accuracy).sum::<f64>() / tail.len() as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Trains one seed, handing every report to `on_report` as it completes.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, on_report: &mut dyn FnMut(&RoundReport) -> Result<()>) -> Result<SeedRun> {
    let mut fed = Federation::new(cfg, seed)?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let report = fed.step()?;
        on_report(&report)?;
        reports.push(report);
    }
    let final_accuracy = final_accuracy(&reports)?;
    Ok(SeedRun {
        seed,
        reports,
        final_accuracy,
    })
}

pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainingSummary> {
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| run_seed(cfg, seed, &mut |_| Ok(())))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(runs))
}

pub fn summarize(runs: Vec<SeedRun>) -> TrainingSummary {
    let finals: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
    let (mean, std) = mean_std(&finals);
    TrainingSummary { runs, mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::Backbone;

    fn scalar_model(v: f64) -> ModelParams {
        let mut m = ModelParams::new(Backbone::Gcn, 1, 1, 1, 0);
        m.set_flat_values(&[v, v]).unwrap();
        m
    }

    #[test]
    fn fedavg_small_cases() {
        let one = fedavg_aggregate(&[scalar_model(1.5)], &[7.0]).unwrap();
        assert_eq!(one.flat_values(), vec![1.5, 1.5]);
        let two = fedavg_aggregate(&[scalar_model(0.0), scalar_model(4.0)], &[1.0, 3.0]).unwrap();
        assert_eq!(two.flat_values(), vec![3.0, 3.0]);
        let m = ModelParams::new(Backbone::Gcn, 3, 5, 2, 9);
        let same = fedavg_aggregate(&[m.clone(), m.clone(), m.clone()], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(same.flat_values(), m.flat_values());
        let other = ModelParams::new(Backbone::Gcn, 3, 4, 2, 9);
        assert!(fedavg_aggregate(&[m, other], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn prox_zero_cases() {
        let m = ModelParams::new(Backbone::Gcn, 3, 4, 2, 1);
        let mut t = Tape::new();
        let leaves = m.leaves(&mut t);
        let same = fedprox_regularizer(&mut t, &leaves, &m, 0.5).unwrap();
        assert_eq!(t.scalar(same), 0.0);
        let other = ModelParams::new(Backbone::Gcn, 3, 4, 2, 2);
        let zero_mu = fedprox_regularizer(&mut t, &leaves, &other, 0.0).unwrap();
        assert_eq!(t.scalar(zero_mu), 0.0);
    }

    #[test]
    fn prox_gradient_is_mu_times_difference() {
        let local = ModelParams::new(Backbone::Gcn, 3, 4, 2, 1);
        let global = ModelParams::new(Backbone::Gcn, 3, 4, 2, 2);
        let mut t = Tape::new();
        let leaves = local.leaves(&mut t);
        let r = fedprox_regularizer(&mut t, &leaves, &global, 0.3).unwrap();
        let grads = t.backward(r).unwrap();
        for ((v, l), g) in leaves.iter().zip(&local.params).zip(&global.params) {
            let expected = l.value.sub(&g.value).unwrap().scale(0.3);
            let got = grads.get(*v).unwrap();
            assert!(got.sub(&expected).unwrap().max_abs() < 1e-15);
        }
    }

    #[test]
    fn statistics() {
        let (m, s) = mean_std(&[0.7, 0.8, 0.9]);
        assert!((m - 0.8).abs() < 1e-15 && (s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let reports: Vec<RoundReport> = (1..=7)
            .map(|r| RoundReport {
                round: r,
                clients: vec![],
                test_accuracy: r as f64 / 10.0,
                sis: 0.0,
                wall_ms: 0.0,
            })
            .collect();
        assert!((final_accuracy(&reports).unwrap() - 0.5).abs() < 1e-15);
        assert!((final_accuracy(&reports[..3]).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn report_serialization_omits_wall_time() {
        let r = RoundReport {
            round: 1,
            clients: vec![],
            test_accuracy: 0.5,
            sis: 1.0,
            wall_ms: 12.0,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("wall"));
    }
}
