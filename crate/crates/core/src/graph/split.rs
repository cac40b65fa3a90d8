use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        if [train, val, test].iter().any(|x| !(*x >= 0.0)) || (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios must be nonnegative and sum to 1, got {train}/{val}/{test}"
            )));
        }
        Ok(r)
    }
}

/// Disjoint train/val/test node sets, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMasks {
    /// Masks re-expressed in the dense ids of a subgraph whose node `i` is
    /// parent node `original_ids[i]`.
    pub fn restrict(&self, original_ids: &[usize]) -> SplitMasks {
        let max = original_ids.iter().max().map_or(0, |&m| m + 1);
        let mut local = vec![usize::MAX; max];
        for (i, &u) in original_ids.iter().enumerate() {
            local[u] = i;
        }
        let map = |set: &[usize]| -> Vec<usize> {
            let mut out: Vec<usize> = set
                .iter()
                .filter(|&&u| u < max && local[u] != usize::MAX)
                .map(|&u| local[u])
                .collect();
            out.sort_unstable();
            out
        };
        SplitMasks {
            train: map(&self.train),
            val: map(&self.val),
            test: map(&self.test),
        }
    }
}

/// Per-class shuffled split. Val and test receive `floor(n·ratio)` nodes of
/// each class and train takes the remainder. Classes with fewer than three
/// nodes go entirely to train. Unlabeled nodes are in no mask.
pub fn stratified_split(g: &Graph, ratios: SplitRatios, seed: u64) -> Result<SplitMasks> {
    let ratios = SplitRatios::new(ratios.train, ratios.val, ratios.test)?;
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for (u, label) in g.labels().iter().enumerate() {
        if let Some(c) = label {
            by_class[*c].push(u);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = SplitMasks::default();
    for (c, mut nodes) in by_class.into_iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < 3 {
            log::warn!("class {c} has {} nodes; all assigned to train", nodes.len());
            masks.train.extend(nodes);
            continue;
        }
        nodes.shuffle(&mut rng);
        let n = nodes.len() as f64;
        let n_val = (n * ratios.val + 1e-9).floor() as usize;
        let n_test = (n * ratios.test + 1e-9).floor() as usize;
        masks.val.extend_from_slice(&nodes[..n_val]);
        masks.test.extend_from_slice(&nodes[n_val..n_val + n_test]);
        masks.train.extend_from_slice(&nodes[n_val + n_test..]);
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    Ok(masks)
}
