//! Louvain modularity optimization and exact-client-count partitioning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Node-to-client assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    pub assignment: Vec<usize>,
    pub num_clients: usize,
}

impl PartitionPlan {
    pub fn from_assignment(assignment: Vec<usize>) -> Result<Self> {
        let num_clients = assignment.iter().max().map_or(0, |&m| m + 1);
        let plan = Self {
            assignment,
            num_clients,
        };
        if plan.members().iter().any(Vec::is_empty) {
            return Err(Error::Graph("partition has an empty client".into()));
        }
        Ok(plan)
    }

    /// Node ids of every client, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clients];
        for (u, &c) in self.assignment.iter().enumerate() {
            out[c].push(u);
        }
        out
    }
}

/// Weighted graph used across aggregation levels. `adj[i]` includes the
/// self-loop weight of aggregated nodes; weights follow the symmetric
/// adjacency-matrix convention (a self-loop of an aggregated node holds twice
/// its internal edge weight).
struct LevelGraph {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    total: f64,
}

impl LevelGraph {
    fn from_graph(g: &Graph) -> Self {
        let adj: Vec<Vec<(usize, f64)>> = (0..g.num_nodes())
            .map(|u| g.neighbors(u).iter().map(|&v| (v, 1.0)).collect())
            .collect();
        Self::with_adj(adj)
    }

    fn with_adj(adj: Vec<Vec<(usize, f64)>>) -> Self {
        let degree: Vec<f64> = adj.iter().map(|l| l.iter().map(|&(_, w)| w).sum()).collect();
        let total = degree.iter().sum();
        Self { adj, degree, total }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// One round of local moves. Returns whether any node changed community.
    fn local_moves(&self, comm: &mut [usize], order: &[usize], resolution: f64) -> bool {
        let m2 = self.total;
        let mut tot = vec![0.0; self.len()];
        for (i, &c) in comm.iter().enumerate() {
            tot[c] += self.degree[i];
        }
        let mut improved = false;
        loop {
            let mut moved = false;
            for &i in order {
                let ki = self.degree[i];
                let current = comm[i];
                let mut links: BTreeMap<usize, f64> = BTreeMap::new();
                for &(j, w) in &self.adj[i] {
                    if j != i {
                        *links.entry(comm[j]).or_insert(0.0) += w;
                    }
                }
                tot[current] -= ki;
                let gain = |c: usize, k_in: f64| k_in - resolution * tot[c] * ki / m2;
                let mut best = current;
                let mut best_gain = gain(current, links.get(&current).copied().unwrap_or(0.0));
                for (&c, &k_in) in &links {
                    let gn = gain(c, k_in);
                    if gn > best_gain + 1e-12 {
                        best = c;
                        best_gain = gn;
                    }
                }
                tot[best] += ki;
                if best != current {
                    comm[i] = best;
                    moved = true;
                    improved = true;
                }
            }
            if !moved {
                break;
            }
        }
        improved
    }

    fn aggregate(&self, comm: &[usize], count: usize) -> Self {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); count];
        for i in 0..self.len() {
            for &(j, w) in &self.adj[i] {
                *maps[comm[i]].entry(comm[j]).or_insert(0.0) += w;
            }
        }
        Self::with_adj(maps.into_iter().map(|m| m.into_iter().collect()).collect())
    }
}

/// Relabels communities densely in order of first appearance.
fn compact(comm: &mut [usize]) -> usize {
    let mut map = BTreeMap::new();
    let mut next = 0;
    for c in comm.iter_mut() {
        let id = *map.entry(*c).or_insert_with(|| {
            next += 1;
            next - 1
        });
        *c = id;
    }
    next
}

/// Unweighted Louvain with the given resolution. Node visitation order is a
/// seeded shuffle, so the result is a pure function of `(g, seed)`.
pub fn louvain_communities(g: &Graph, seed: u64, resolution: f64) -> Vec<usize> {
    let n = g.num_nodes();
    let mut membership: Vec<usize> = (0..n).collect();
    if g.num_edges() == 0 {
        return membership;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = LevelGraph::from_graph(g);
    loop {
        let mut comm: Vec<usize> = (0..level.len()).collect();
        let mut order: Vec<usize> = (0..level.len()).collect();
        order.shuffle(&mut rng);
        if !level.local_moves(&mut comm, &order, resolution) {
            break;
        }
        let count = compact(&mut comm);
        for m in membership.iter_mut() {
            *m = comm[*m];
        }
        if count == level.len() {
            break;
        }
        level = level.aggregate(&comm, count);
    }
    compact(&mut membership);
    membership
}

/// Newman modularity of a community assignment on an unweighted graph.
pub fn modularity(g: &Graph, comm: &[usize]) -> f64 {
    let m = g.num_edges() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let count = comm.iter().max().map_or(0, |&c| c + 1);
    let mut internal = vec![0.0; count];
    let mut degree = vec![0.0; count];
    for &(u, v) in g.edges() {
        if comm[u] == comm[v] {
            internal[comm[u]] += 1.0;
        }
    }
    for u in 0..g.num_nodes() {
        degree[comm[u]] += g.degree(u) as f64;
    }
    internal
        .iter()
        .zip(&degree)
        .map(|(&l, &d)| l / m - (d / (2.0 * m)).powi(2))
        .sum()
}

/// Number of edges between part `from` and every part.
fn links_from(g: &Graph, owner: &[usize], from: usize, parts: usize) -> Vec<usize> {
    let mut links = vec![0; parts];
    for &(u, v) in g.edges() {
        if owner[u] == from && owner[v] != from {
            links[owner[v]] += 1;
        } else if owner[v] == from && owner[u] != from {
            links[owner[u]] += 1;
        }
    }
    links
}

/// Louvain followed by merge/split until exactly `target_clients` parts exist.
///
/// Too many communities: the smallest is merged into the community it shares
/// the most edges with (the smallest other community when it has none).
/// Too few: the largest community is re-partitioned with Louvain on its
/// induced subgraph, falling back to a BFS-order bisection when Louvain keeps
/// it whole. Clients are numbered by their smallest node id.
pub fn louvain_partition(g: &Graph, target_clients: usize, seed: u64) -> Result<PartitionPlan> {
    let n = g.num_nodes();
    if target_clients == 0 || target_clients > n {
        return Err(Error::invalid(format!(
            "cannot partition {n} nodes into {target_clients} clients"
        )));
    }
    let membership = louvain_communities(g, seed, 1.0);
    let mut parts: Vec<Vec<usize>> = group(&membership);

    let mut split_round = 0u64;
    while parts.len() < target_clients {
        let largest = (0..parts.len())
            .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(parts[b][0].cmp(&parts[a][0])))
            .expect("at least one part");
        let nodes = parts.swap_remove(largest);
        split_round += 1;
        let sub = g.induced_subgraph(&nodes)?;
        let sub_comm = louvain_communities(&sub.graph, derive_seed(seed, &[0x5B11, split_round]), 1.0);
        let pieces = group(&sub_comm);
        if pieces.len() >= 2 {
            parts.extend(pieces.into_iter().map(|p| p.into_iter().map(|i| nodes[i]).collect()));
        } else {
            let order = bfs_order(&sub.graph);
            let half = order.len() / 2;
            let mut first: Vec<usize> = order[..half].iter().map(|&i| nodes[i]).collect();
            let mut second: Vec<usize> = order[half..].iter().map(|&i| nodes[i]).collect();
            first.sort_unstable();
            second.sort_unstable();
            parts.push(first);
            parts.push(second);
        }
    }

    while parts.len() > target_clients {
        let smallest = (0..parts.len())
            .min_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(parts[a][0].cmp(&parts[b][0])))
            .expect("at least one part");
        let mut owner = vec![0; n];
        for (p, nodes) in parts.iter().enumerate() {
            for &u in nodes {
                owner[u] = p;
            }
        }
        let links = links_from(g, &owner, smallest, parts.len());
        let into = (0..parts.len())
            .filter(|&p| p != smallest)
            .min_by(|&a, &b| {
                links[b]
                    .cmp(&links[a])
                    .then(parts[a].len().cmp(&parts[b].len()))
                    .then(parts[a][0].cmp(&parts[b][0]))
            })
            .expect("more than one part");
        let moved = std::mem::take(&mut parts[smallest]);
        parts[into].extend(moved);
        parts[into].sort_unstable();
        parts.swap_remove(smallest);
    }

    parts.sort_by_key(|p| p[0]);
    let mut assignment = vec![0; n];
    for (c, nodes) in parts.iter().enumerate() {
        for &u in nodes {
            assignment[u] = c;
        }
    }
    PartitionPlan::from_assignment(assignment)
}

fn group(membership: &[usize]) -> Vec<Vec<usize>> {
    let count = membership.iter().max().map_or(0, |&c| c + 1);
    let mut parts = vec![Vec::new(); count];
    for (u, &c) in membership.iter().enumerate() {
        parts[c].push(u);
    }
    parts.retain(|p| !p.is_empty());
    parts
}

/// BFS visitation order, restarting at the smallest unvisited node.
fn bfs_order(g: &Graph) -> Vec<usize> {
    let n = g.num_nodes();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseMatrix;

    fn plain(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.to_vec(), DenseMatrix::zeros(n, 1), vec![None; n], 1).unwrap()
    }

    fn two_triangles() -> Graph {
        plain(6, &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)])
    }

    /// All set partitions of 0..n as restricted growth strings.
    fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = vec![0; n];
        fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == cur.len() {
                out.push(cur.clone());
                return;
            }
            for c in 0..=max + 1 {
                cur[i] = c;
                rec(i + 1, max.max(c), cur, out);
            }
        }
        if n > 0 {
            rec(1, 0, &mut cur, &mut out);
        }
        out
    }

    #[test]
    fn brute_force_optimum_matches_louvain_on_two_triangles() {
        let g = two_triangles();
        let parts = all_partitions(6);
        assert_eq!(parts.len(), 203);
        let best = parts
            .iter()
            .max_by(|a, b| modularity(&g, a).partial_cmp(&modularity(&g, b)).unwrap())
            .unwrap();
        assert_eq!(best, &vec![0, 0, 0, 1, 1, 1]);
        for seed in 0..5 {
            let plan = louvain_partition(&g, 2, seed).unwrap();
            assert_eq!(plan.assignment, vec![0, 0, 0, 1, 1, 1]);
            assert!((modularity(&g, &plan.assignment) - modularity(&g, best)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_client_and_singletons() {
        let g = two_triangles();
        assert_eq!(louvain_partition(&g, 1, 0).unwrap().assignment, vec![0; 6]);
        let s = louvain_partition(&g, 6, 0).unwrap();
        let mut ids = s.assignment.clone();
        ids.sort_unstable();
        assert_eq!(ids, (0..6).collect::<Vec<_>>());
        assert!(louvain_partition(&g, 7, 0).is_err());
        assert!(louvain_partition(&g, 0, 0).is_err());
    }

    #[test]
    fn handles_edgeless_graph() {
        let g = plain(5, &[]);
        let plan = louvain_partition(&g, 2, 1).unwrap();
        assert_eq!(plan.num_clients, 2);
        assert_eq!(plan.members().iter().map(Vec::len).sum::<usize>(), 5);
    }
}
