use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Stochastic block model with class-mean Gaussian features.
#[derive(Clone, Debug, PartialEq)]
pub struct SbmParams {
    pub block_sizes: Vec<usize>,
    /// Intra-block edge probability; one value for all blocks or one per block.
    pub p_in: Vec<f64>,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the per-block mean vectors. Noise is unit variance.
    pub mean_scale: f64,
}

impl SbmParams {
    pub fn uniform(block_sizes: Vec<usize>, p_in: f64, p_out: f64, feature_dim: usize) -> Self {
        Self {
            block_sizes,
            p_in: vec![p_in],
            p_out,
            feature_dim,
            mean_scale: 1.0,
        }
    }

    fn p_in_for(&self, block: usize) -> f64 {
        if self.p_in.len() == 1 {
            self.p_in[0]
        } else {
            self.p_in[block]
        }
    }
}

pub fn sbm_generate(params: &SbmParams, seed: u64) -> Result<Graph> {
    let blocks = params.block_sizes.len();
    if blocks == 0 || params.block_sizes.contains(&0) {
        return Err(Error::invalid("sbm: every block must be nonempty"));
    }
    if params.p_in.len() != 1 && params.p_in.len() != blocks {
        return Err(Error::invalid(format!(
            "sbm: {} intra-block probabilities for {blocks} blocks",
            params.p_in.len()
        )));
    }
    let in_range = |p: f64| (0.0..=1.0).contains(&p);
    if !params.p_in.iter().all(|&p| in_range(p)) || !in_range(params.p_out) {
        return Err(Error::invalid("sbm: probabilities must lie in [0, 1]"));
    }
    if !(params.mean_scale >= 0.0) {
        return Err(Error::invalid("sbm: mean_scale must be >= 0"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block_of: Vec<usize> = params
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = block_of.len();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of[u] == block_of[v] {
                params.p_in_for(block_of[u])
            } else {
                params.p_out
            };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let d = params.feature_dim;
    let means: Vec<Vec<f64>> = (0..blocks)
        .map(|_| {
            (0..d)
                .map(|_| params.mean_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>()
        })
        .collect();
    let mut features = DenseMatrix::zeros(n, d);
    for u in 0..n {
        let mean = &means[block_of[u]];
        for (j, x) in features.row_mut(u).iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *x = mean[j] + noise;
        }
    }
    let labels = block_of.iter().map(|&b| Some(b)).collect();
    Graph::new(n, edges, features, labels, blocks)
}
