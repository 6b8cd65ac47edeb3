//! Bounded top-K selection and the approximate hierarchical priority queue.
//!
//! An AHPQ feeds each input stream into its own truncated level-one queue and
//! then folds every level-one queue into one exact level-two queue of length
//! K. The level-one length is sized from a binomial model of how the true
//! top-K spread over `num_queue` streams.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Ingestion cost of the hardware queue this type stands in for.
pub const CYCLES_PER_INSERT: u64 = 2;

/// A scored vector id, ordered by `(distance, id)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f32,
}

impl Neighbor {
    pub fn new(id: u64, distance: f32) -> Self {
        Self { id, distance }
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance.total_cmp(&other.distance).then(self.id.cmp(&other.id))
    }
}

/// Retains the `capacity` smallest items inserted so far.
#[derive(Debug, Clone)]
pub struct SystolicQueue {
    capacity: usize,
    heap: BinaryHeap<Neighbor>,
    ingested: u64,
}

impl SystolicQueue {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, heap: BinaryHeap::with_capacity(capacity + 1), ingested: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Modeled cycles spent ingesting so far.
    pub fn cycles(&self) -> u64 {
        self.ingested * CYCLES_PER_INSERT
    }

    pub fn insert(&mut self, distance: f32, id: u64) -> Result<()> {
        if distance.is_nan() {
            return Err(Error::Rejected(format!("NaN distance for id {id}")));
        }
        self.ingested += 1;
        self.offer(Neighbor::new(id, distance));
        Ok(())
    }

    #[inline]
    fn offer(&mut self, n: Neighbor) {
        if self.heap.len() < self.capacity {
            self.heap.push(n);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if n < *top {
                *top = n;
            }
        }
    }

    /// Largest retained item, if full.
    pub fn threshold(&self) -> Option<Neighbor> {
        (self.heap.len() == self.capacity).then(|| self.heap.peek().copied()).flatten()
    }

    pub fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec()
    }

    pub fn to_sorted(&self) -> Vec<Neighbor> {
        self.clone().into_sorted()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AhpqConfig {
    pub k: usize,
    pub num_queue: usize,
    pub l1_len: usize,
    pub target_prob: f64,
}

impl AhpqConfig {
    /// Level-one queues sized by [`size_l1_queue`].
    pub fn sized(k: usize, num_queue: usize, target_prob: f64) -> Result<Self> {
        let l1_len = size_l1_queue(k, num_queue, target_prob)?;
        let cfg = Self { k, num_queue, l1_len, target_prob };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Untruncated level-one queues; equivalent to exact selection.
    pub fn exact(k: usize, num_queue: usize) -> Self {
        Self { k, num_queue, l1_len: k, target_prob: 0.99 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_queue == 0 {
            return Err(Error::config("AHPQ needs at least one level-one queue"));
        }
        if self.l1_len > self.k {
            return Err(Error::config(format!("L1 length {} exceeds K={}", self.l1_len, self.k)));
        }
        if !(self.target_prob > 0.0 && self.target_prob < 1.0) {
            return Err(Error::config(format!("target probability {} not in (0,1)", self.target_prob)));
        }
        Ok(())
    }

    pub fn is_exact(&self) -> bool {
        self.l1_len == self.k
    }
}

/// Two-level queue hierarchy for one query.
#[derive(Debug, Clone)]
pub struct Ahpq {
    k: usize,
    l1: Vec<SystolicQueue>,
}

impl Ahpq {
    pub fn new(config: &AhpqConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { k: config.k, l1: (0..config.num_queue).map(|_| SystolicQueue::new(config.l1_len)).collect() })
    }

    pub fn num_queue(&self) -> usize {
        self.l1.len()
    }

    pub fn insert(&mut self, queue: usize, distance: f32, id: u64) -> Result<()> {
        self.l1[queue].insert(distance, id)
    }

    pub fn l1_queues(&self) -> &[SystolicQueue] {
        &self.l1
    }

    /// Folds every level-one queue into the level-two queue.
    pub fn finish(self) -> Vec<Neighbor> {
        let mut l2 = SystolicQueue::new(self.k);
        for q in self.l1 {
            for n in q.heap {
                l2.offer(n);
            }
        }
        l2.into_sorted()
    }
}

/// Runs one AHPQ over `num_queue` input streams of `(distance, id)`.
pub fn ahpq_run(config: &AhpqConfig, streams: &[Vec<(f32, u64)>]) -> Result<Vec<Neighbor>> {
    if streams.len() != config.num_queue {
        return Err(Error::config(format!(
            "{} streams for {} level-one queues",
            streams.len(),
            config.num_queue
        )));
    }
    let mut ahpq = Ahpq::new(config)?;
    for (q, stream) in streams.iter().enumerate() {
        for &(d, id) in stream {
            ahpq.insert(q, d, id)?;
        }
    }
    Ok(ahpq.finish())
}

/// `p(k)` for `k = 0..=K`: probability that one of `num_queue` queues receives
/// exactly `k` of the `K` results under uniform assignment.
pub fn binomial_pmf(k_total: usize, num_queue: usize) -> Vec<f64> {
    assert!(num_queue >= 1);
    let p = 1.0 / num_queue as f64;
    if num_queue == 1 {
        let mut out = vec![0.0; k_total + 1];
        out[k_total] = 1.0;
        return out;
    }
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let n = k_total as f64;
    let mut ln_choose = 0.0f64;
    let mut out = Vec::with_capacity(k_total + 1);
    for k in 0..=k_total {
        if k > 0 {
            ln_choose += (n - (k - 1) as f64).ln() - (k as f64).ln();
        }
        out.push((ln_choose + k as f64 * ln_p + (n - k as f64) * ln_q).exp());
    }
    out
}

/// `1 − P(L)`, summed directly over the upper tail.
fn upper_tail(pmf: &[f64], l: usize) -> f64 {
    pmf.iter().skip(l + 1).rev().sum()
}

/// Union-bound probability that some level-one queue of length `l` drops a
/// true result: `num_queue · (1 − P(l))`, clamped to `[0, 1]`.
pub fn overflow_prob(k_total: usize, num_queue: usize, l: usize) -> f64 {
    if l >= k_total {
        return 0.0;
    }
    let pmf = binomial_pmf(k_total, num_queue.max(1));
    (num_queue as f64 * upper_tail(&pmf, l)).clamp(0.0, 1.0)
}

/// Smallest level-one length whose union-bound miss probability is at most
/// `1 − target_prob`, capped at `K`.
pub fn size_l1_queue(k_total: usize, num_queue: usize, target_prob: f64) -> Result<usize> {
    if !(target_prob > 0.0 && target_prob < 1.0) {
        return Err(Error::config(format!("target probability {target_prob} not in (0,1)")));
    }
    if k_total == 0 || num_queue == 0 {
        return Err(Error::config("K and num_queue must be at least 1"));
    }
    let pmf = binomial_pmf(k_total, num_queue);
    let budget = 1.0 - target_prob;
    Ok((0..k_total)
        .find(|&l| num_queue as f64 * upper_tail(&pmf, l) <= budget)
        .unwrap_or(k_total))
}

/// Reference selection: full sort then truncate.
pub fn exact_top_k(items: impl IntoIterator<Item = (f32, u64)>, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = items.into_iter().map(|(d, id)| Neighbor::new(id, d)).collect();
    all.sort_unstable();
    all.truncate(k);
    all
}
