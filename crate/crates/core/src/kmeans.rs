//! Lloyd's k-means with seeded k-means++ initialization.
//!
//! Shared by the coarse quantizer and the per-subspace PQ codebooks.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distance::nearest_row;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Train on a seeded random subset of at most this many points.
    pub max_train_points: Option<usize>,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, max_iters: 25, seed, max_train_points: None }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Row-major `k × dim`.
    pub centroids: Vec<f32>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

pub fn train(data: &[f32], dim: usize, params: &KMeansParams) -> Result<KMeansResult> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::config(format!(
            "data length {} is not a multiple of dimension {dim}",
            data.len()
        )));
    }
    let k = params.k;
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::Training(format!("{n} training points for {k} clusters")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("training data contains non-finite values".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let sampled;
    let points: &[f32] = match params.max_train_points {
        Some(cap) if cap < n => {
            let cap = cap.max(k);
            let mut picks = index::sample(&mut rng, n, cap).into_vec();
            picks.sort_unstable();
            sampled = picks
                .iter()
                .flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied())
                .collect::<Vec<f32>>();
            &sampled
        }
        _ => data,
    };
    let n = points.len() / dim;

    let mut centroids = init_plus_plus(points, dim, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut dists = vec![0f32; n];
    let mut wcss_history = Vec::with_capacity(params.max_iters);
    let mut iterations = 0;

    for _ in 0..params.max_iters.max(1) {
        iterations += 1;
        let assigned: Vec<(usize, f32)> = points
            .par_chunks_exact(dim)
            .map(|p| nearest_row(&centroids, dim, p))
            .collect();
        let mut changed = false;
        for (i, (c, d)) in assigned.into_iter().enumerate() {
            if assignment[i] != c {
                changed = true;
                assignment[i] = c;
            }
            dists[i] = d;
        }
        wcss_history.push(dists.iter().map(|&d| d as f64).sum());
        if !changed {
            break;
        }

        let mut counts = vec![0usize; k];
        for &c in &assignment {
            counts[c] += 1;
        }
        reseed_empty(&mut assignment, &mut dists, &mut counts);
        centroids = means(points, dim, &assignment, &counts);
    }

    Ok(KMeansResult { centroids, wcss_history, iterations })
}

fn init_plus_plus(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut best: Vec<f64> = points
        .par_chunks_exact(dim)
        .map(|p| crate::distance::l2_sq(p, &centroids[..dim]) as f64)
        .collect();

    for _ in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in best.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // Rounding can run off the end; fall back to the last weighted point.
            pick.unwrap_or_else(|| best.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // All remaining points coincide with a centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        best.par_iter_mut()
            .zip(points.par_chunks_exact(dim))
            .for_each(|(b, p)| {
                let d = crate::distance::l2_sq(p, &c) as f64;
                if d < *b {
                    *b = d;
                }
            });
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Moves the point farthest from its centroid into each empty cluster.
fn reseed_empty(assignment: &mut [usize], dists: &mut [f32], counts: &mut [usize]) {
    for c in 0..counts.len() {
        if counts[c] > 0 {
            continue;
        }
        let donor = (0..assignment.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
        let Some(p) = donor else { break };
        counts[assignment[p]] -= 1;
        assignment[p] = c;
        dists[p] = 0.0;
        counts[c] = 1;
    }
}

fn means(points: &[f32], dim: usize, assignment: &[usize], counts: &[usize]) -> Vec<f32> {
    let k = counts.len();
    let mut sums = vec![0f64; k * dim];
    for (p, &c) in points.chunks_exact(dim).zip(assignment) {
        let row = &mut sums[c * dim..(c + 1) * dim];
        for (s, &v) in row.iter_mut().zip(p) {
            *s += v as f64;
        }
    }
    sums.chunks_exact(dim)
        .zip(counts)
        .flat_map(|(row, &cnt)| {
            let cnt = cnt.max(1) as f64;
            row.iter().map(move |&s| (s / cnt) as f32)
        })
        .collect()
}
