//! Graph data model and the operations that produce client data from it.

mod io;
pub mod louvain;
mod sbm;
mod split;

pub use io::{load_graph, parse_graph, save_graph, write_graph};
pub use louvain::{louvain_communities, louvain_partition, modularity, PartitionPlan};
pub use sbm::{sbm_generate, SbmParams};
pub use split::{stratified_split, SplitMasks, SplitRatios};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Undirected simple graph with node features and optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    features: DenseMatrix,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl Graph {
    /// Validates and builds a graph. Edges are stored as `(min, max)` pairs in
    /// sorted order; a repeated undirected pair or a self-loop is rejected.
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        features: DenseMatrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::Graph(format!(
                "feature matrix has {} rows for {n} nodes",
                features.rows()
            )));
        }
        if labels.len() != n {
            return Err(Error::Graph(format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= num_classes) {
            return Err(Error::Graph(format!("label {bad} outside {num_classes} classes")));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge ({u}, {v}) references a node >= {n}")));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop on node {u}")));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Graph(format!("duplicate edge ({}, {})", w[0].0, w[0].1)));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &canon {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges: canon,
            adjacency,
            features,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Dense 0/1 adjacency matrix, optionally with unit self-loops.
    pub fn adjacency_matrix(&self, self_loops: bool) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        if self_loops {
            for i in 0..self.n {
                a.set(i, i, 1.0);
            }
        }
        a
    }

    /// Subgraph induced by `nodes`. Only edges with both endpoints inside the
    /// subset survive; node ids are re-indexed densely in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Subgraph> {
        if nodes.is_empty() {
            return Err(Error::Graph("induced_subgraph: empty node subset".into()));
        }
        let mut new_id = vec![usize::MAX; self.n];
        for (i, &u) in nodes.iter().enumerate() {
            if u >= self.n {
                return Err(Error::Graph(format!("induced_subgraph: node {u} out of range")));
            }
            if new_id[u] != usize::MAX {
                return Err(Error::Graph(format!("induced_subgraph: node {u} repeated")));
            }
            new_id[u] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| new_id[u] != usize::MAX && new_id[v] != usize::MAX)
            .map(|&(u, v)| (new_id[u], new_id[v]))
            .collect();
        let graph = Graph::new(
            nodes.len(),
            edges,
            self.features.select_rows(nodes),
            nodes.iter().map(|&u| self.labels[u]).collect(),
            self.num_classes,
        )?;
        Ok(Subgraph {
            graph,
            original_ids: nodes.to_vec(),
        })
    }

    /// Same graph with node `u` renamed to `perm[u]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let mut inverse = vec![0; self.n];
        for (u, &p) in perm.iter().enumerate() {
            inverse[p] = u;
        }
        Graph::new(
            self.n,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect(),
            self.features.select_rows(&inverse),
            inverse.iter().map(|&u| self.labels[u]).collect(),
            self.num_classes,
        )
    }
}

/// An induced subgraph plus the map from its dense ids back to the parent.
#[derive(Clone, Debug)]
pub struct Subgraph {
    pub graph: Graph,
    pub original_ids: Vec<usize>,
}

/// `D̃^{-1/2}(A[+I])D̃^{-1/2}`. Rows of nodes with zero degree (no neighbors,
/// no self-loop) are all zero.
pub fn normalized_adjacency(g: &Graph, add_self_loops: bool) -> DenseMatrix {
    let n = g.num_nodes();
    let extra = usize::from(add_self_loops);
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| {
            let d = g.degree(u) + extra;
            if d == 0 {
                0.0
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect();
    let mut out = DenseMatrix::zeros(n, n);
    for u in 0..n {
        if add_self_loops {
            out.set(u, u, inv_sqrt[u] * inv_sqrt[u]);
        }
        for &v in g.neighbors(u) {
            out.set(u, v, inv_sqrt[u] * inv_sqrt[v]);
        }
    }
    out
}
