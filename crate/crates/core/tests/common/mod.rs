#![allow(dead_code)]

use nearmem::dataset::{DatasetSpec, Distribution};
use nearmem::ivf::{train_ivf, IvfIndex};
use nearmem::kmeans::KMeansParams;
use nearmem::pq::{train_pq, PqTrainParams};

pub struct Small {
    pub dim: usize,
    pub base: Vec<f32>,
    pub queries: Vec<f32>,
    pub index: IvfIndex,
}

impl Small {
    pub fn query(&self, i: usize) -> &[f32] {
        &self.queries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len() / self.dim
    }
}

/// A few thousand clustered vectors with a trained index; builds in well
/// under a second.
pub fn small(n: usize, nq: usize, dim: usize, nlist: usize, m: usize, seed: u64) -> Small {
    let spec = DatasetSpec { n: n + nq, dim, distribution: Distribution::Clustered { clusters: 40, spread: 0.4 }, seed };
    let mut base = spec.generate().unwrap().data;
    let queries = base.split_off(n * dim);
    let quantizer = train_ivf(&base, dim, &KMeansParams { k: nlist, max_iters: 10, seed, max_train_points: None }).unwrap();
    let residuals: Vec<f32> = base
        .chunks_exact(dim)
        .flat_map(|v| quantizer.residual(v, quantizer.assign(v).unwrap() as usize))
        .collect();
    let codebook = train_pq(&residuals, dim, &PqTrainParams { m, ksub: 32, kmeans_iters: 10, seed, max_train_points: None }).unwrap();
    let ids: Vec<u64> = (0..n as u64).map(|i| 1000 + 3 * i).collect();
    let index = IvfIndex::build(quantizer, codebook, &ids, &base).unwrap();
    Small { dim, base, queries, index }
}
