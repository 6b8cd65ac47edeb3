//! Analytic serving models: the inference/retrieval accelerator ratio and
//! multi-node latency extrapolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-batch latency in milliseconds, either fixed or tabulated by batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LatencyProfile {
    Constant(f64),
    /// `(batch, ms)` points, linearly interpolated.
    Table(Vec<(u32, f64)>),
}

impl LatencyProfile {
    pub fn at(&self, batch: u32) -> Result<f64> {
        let ms = match self {
            LatencyProfile::Constant(ms) => *ms,
            LatencyProfile::Table(points) => {
                let mut pts = points.clone();
                pts.sort_by_key(|p| p.0);
                match pts.binary_search_by_key(&batch, |p| p.0) {
                    Ok(i) => pts[i].1,
                    Err(i) if i == 0 || i == pts.len() => {
                        return Err(Error::config(format!("batch size {batch} outside latency table")))
                    }
                    Err(i) => {
                        let (b0, l0) = pts[i - 1];
                        let (b1, l1) = pts[i];
                        l0 + (l1 - l0) * (batch - b0) as f64 / (b1 - b0) as f64
                    }
                }
            }
        };
        if !(ms.is_finite() && ms > 0.0) {
            return Err(Error::config(format!("latency must be positive and finite, got {ms}")));
        }
        Ok(ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputInputs {
    /// Tokens generated between retrievals.
    pub interval: u32,
    pub batch: u32,
    pub n_inference: u32,
    pub n_retrieval: u32,
    pub inference_ms: f64,
    pub retrieval_ms: f64,
}

/// Tokens per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub inference: f64,
    pub retrieval: f64,
    pub system: f64,
}

/// `min(i·b·N_I / (i·L_I + L_R), i·b·N_R / L_R)` in tokens per second.
pub fn system_throughput(inputs: &ThroughputInputs) -> Result<Throughput> {
    let ThroughputInputs { interval, batch, n_inference, n_retrieval, inference_ms, retrieval_ms } = *inputs;
    if interval == 0 || batch == 0 {
        return Err(Error::config("interval and batch must be positive"));
    }
    for (name, v) in [("inference", inference_ms), ("retrieval", retrieval_ms)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::config(format!("{name} latency must be positive, got {v}")));
        }
    }
    let i = interval as f64;
    let b = batch as f64;
    let inference = i * b * n_inference as f64 / ((i * inference_ms + retrieval_ms) / 1e3);
    let retrieval = i * b * n_retrieval as f64 / (retrieval_ms / 1e3);
    Ok(Throughput { inference, retrieval, system: inference.min(retrieval) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioChoice {
    pub n_inference: u32,
    pub n_retrieval: u32,
    pub throughput: f64,
}

impl RatioChoice {
    pub fn inference_fraction(&self) -> f64 {
        self.n_inference as f64 / (self.n_inference + self.n_retrieval) as f64
    }
}

/// Sweeps `N_I ∈ [1, total−1]`; ties go to the smaller `N_I`.
pub fn optimal_ratio(total: u32, interval: u32, batch: u32, inference_ms: f64, retrieval_ms: f64) -> Result<RatioChoice> {
    if total < 2 {
        return Err(Error::config("need at least two accelerators"));
    }
    let mut best: Option<RatioChoice> = None;
    for n_i in 1..total {
        let th = system_throughput(&ThroughputInputs {
            interval,
            batch,
            n_inference: n_i,
            n_retrieval: total - n_i,
            inference_ms,
            retrieval_ms,
        })?;
        if best.is_none_or(|b| th.system > b.throughput) {
            best = Some(RatioChoice { n_inference: n_i, n_retrieval: total - n_i, throughput: th.system });
        }
    }
    Ok(best.expect("total >= 2"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingInputs {
    /// Single-node query latencies, milliseconds.
    pub pool_ms: Vec<f64>,
    pub nodes: u32,
    pub hop_latency_us: f64,
    pub trials: usize,
    pub seed: u64,
}

impl ScalingInputs {
    pub fn new(pool_ms: Vec<f64>, nodes: u32) -> Self {
        Self { pool_ms, nodes, hop_latency_us: 10.0, trials: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub median_ms: f64,
    pub p99_ms: f64,
    pub overhead_ms: f64,
}

/// Broadcast plus reduce over a binary tree: `2·⌈log2(N+1)⌉` hops.
pub fn network_overhead_ms(nodes: u32, hop_latency_us: f64) -> f64 {
    let depth = 32 - nodes.leading_zeros();
    2.0 * depth as f64 * hop_latency_us / 1e3
}

/// Nearest-rank percentile of sorted data, `p` in (0, 1].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Each trial takes the slowest of `N` single-node latencies sampled with
/// replacement and adds the tree network overhead.
pub fn scale_latency(inputs: &ScalingInputs) -> Result<LatencySummary> {
    if inputs.pool_ms.is_empty() {
        return Err(Error::config("latency pool is empty"));
    }
    if inputs.nodes == 0 || inputs.trials == 0 {
        return Err(Error::config("nodes and trials must be positive"));
    }
    let overhead_ms = network_overhead_ms(inputs.nodes, inputs.hop_latency_us);
    let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed);
    let pool = &inputs.pool_ms;
    let mut samples: Vec<f64> = (0..inputs.trials)
        .map(|_| {
            let slowest = (0..inputs.nodes)
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .fold(f64::NEG_INFINITY, f64::max);
            slowest + overhead_ms
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    Ok(LatencySummary { median_ms: percentile(&samples, 0.5), p99_ms: percentile(&samples, 0.99), overhead_ms })
}

/// Capacity-planning scenario read by the `plan` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub total: u32,
    #[serde(deserialize_with = "one_or_many")]
    pub i: Vec<u32>,
    pub b: u32,
    #[serde(rename = "L_I_table")]
    pub inference: LatencyProfile,
    #[serde(rename = "L_R_table")]
    pub retrieval: LatencyProfile,
    #[serde(default = "default_hop")]
    pub hop_latency_us: f64,
    /// Optional single-node latency pool for a node-count sweep.
    #[serde(default)]
    pub latency_pool_ms: Option<Vec<f64>>,
    #[serde(default)]
    pub nodes: Option<Vec<u32>>,
}

fn default_hop() -> f64 {
    10.0
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<u32>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(u32),
        Many(Vec<u32>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub interval: u32,
    pub n_inference: u32,
    pub n_retrieval: u32,
    pub th_inference: f64,
    pub th_retrieval: f64,
    pub th_system: f64,
    pub optimal: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("scenario: {e}")))
    }

    /// Every split of `total` accelerators for every interval.
    pub fn sweep(&self) -> Result<Vec<SweepRow>> {
        let l_i = self.inference.at(self.b)?;
        let l_r = self.retrieval.at(self.b)?;
        let mut rows = Vec::new();
        for &i in &self.i {
            let best = optimal_ratio(self.total, i, self.b, l_i, l_r)?;
            for n_i in 1..self.total {
                let th = system_throughput(&ThroughputInputs {
                    interval: i,
                    batch: self.b,
                    n_inference: n_i,
                    n_retrieval: self.total - n_i,
                    inference_ms: l_i,
                    retrieval_ms: l_r,
                })?;
                rows.push(SweepRow {
                    interval: i,
                    n_inference: n_i,
                    n_retrieval: self.total - n_i,
                    th_inference: th.inference,
                    th_retrieval: th.retrieval,
                    th_system: th.system,
                    optimal: n_i == best.n_inference,
                });
            }
        }
        Ok(rows)
    }
}
