//! Mock retrieval-augmented generation client.
//!
//! A stub model emits one query vector per step and retrieves every
//! `interval` tokens. Inference is paused while a retrieval is outstanding,
//! so the two phases of a step are serialized.

use std::io::Write;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coordinator::SearchClient;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::perfmodel::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InferenceLatency {
    Constant { ms: f64 },
    /// Uniform in `mean ± jitter`, seeded per (sequence, step).
    Sampled { mean_ms: f64, jitter_ms: f64, seed: u64 },
}

impl InferenceLatency {
    pub fn sample(&self, sequence: u64, step: u32) -> f64 {
        match *self {
            InferenceLatency::Constant { ms } => ms,
            InferenceLatency::Sampled { mean_ms, jitter_ms, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, sequence, step));
                (mean_ms + jitter_ms * rng.gen_range(-1.0..=1.0)).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    pub interval: u32,
    pub seq_len: u32,
    pub batch: u32,
    pub k: usize,
    pub nprobe: usize,
    pub inference: InferenceLatency,
    /// Actually sleep for the stub inference latency.
    pub simulate_sleep: bool,
    pub request_payloads: bool,
}

impl GenerationConfig {
    pub fn new(interval: u32, seq_len: u32) -> Self {
        Self {
            interval,
            seq_len,
            batch: 1,
            k: 10,
            nprobe: 32,
            inference: InferenceLatency::Constant { ms: 10.0 },
            simulate_sleep: false,
            request_payloads: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.seq_len == 0 || self.batch == 0 {
            return Err(Error::config("interval, seq_len and batch must be at least 1"));
        }
        Ok(())
    }

    pub fn is_retrieval_step(&self, step: u32) -> bool {
        step.is_multiple_of(self.interval)
    }
}

/// Deterministic query vectors keyed by (sequence, step).
pub trait VectorSource: Sync {
    fn dim(&self) -> usize;
    fn vector(&self, sequence: u64, step: u32) -> Vec<f32>;
}

/// Seeded Gaussian vectors.
pub struct SeededSource {
    pub dim: usize,
    pub seed: u64,
}

impl VectorSource for SeededSource {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, sequence: u64, step: u32) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, sequence, step));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// Replays vectors from a `CVEC` trace.
pub struct TraceSource {
    pub vectors: Dataset,
    pub seq_len: u32,
}

impl VectorSource for TraceSource {
    fn dim(&self) -> usize {
        self.vectors.dim
    }

    fn vector(&self, sequence: u64, step: u32) -> Vec<f32> {
        let n = self.vectors.len().max(1) as u64;
        let i = (sequence * self.seq_len as u64 + step as u64) % n;
        self.vectors.row(i as usize).to_vec()
    }
}

fn mix(seed: u64, sequence: u64, step: u32) -> u64 {
    let mut x = seed ^ sequence.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (step as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u32,
    pub inference_ms: f64,
    /// Exactly zero on steps without retrieval.
    pub retrieval_ms: f64,
    pub retrieved_ids: Vec<u64>,
}

impl StepRecord {
    pub fn latency_ms(&self) -> f64 {
        self.inference_ms + self.retrieval_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub sequence: u64,
    pub steps: Vec<StepRecord>,
    /// Set when a retrieval failed and the sequence was aborted.
    pub error: Option<String>,
}

impl StepTrace {
    pub fn retrieval_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.retrieved_ids.is_empty() || s.retrieval_ms > 0.0).count()
    }

    /// CSV with header `step,phase,latency_ms,ids`; ids are space-separated.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "phase", "latency_ms", "ids"]).map_err(csv_err)?;
        for s in &self.steps {
            out.write_record([s.step.to_string(), "inference".into(), format!("{:.6}", s.inference_ms), String::new()])
                .map_err(csv_err)?;
            if s.retrieval_ms > 0.0 || !s.retrieved_ids.is_empty() {
                let ids = s.retrieved_ids.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
                out.write_record([s.step.to_string(), "retrieval".into(), format!("{:.6}", s.retrieval_ms), ids])
                    .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Input(format!("csv: {other:?}")),
    }
}

fn run_sequence(config: &GenerationConfig, client: &SearchClient, source: &dyn VectorSource, sequence: u64) -> StepTrace {
    let mut steps = Vec::with_capacity(config.seq_len as usize);
    for step in 0..config.seq_len {
        let mut record = StepRecord { step, inference_ms: 0.0, retrieval_ms: 0.0, retrieved_ids: Vec::new() };
        if config.is_retrieval_step(step) {
            let query = source.vector(sequence, step);
            let start = Instant::now();
            match client.search(&query, config.nprobe, config.k, config.request_payloads) {
                Ok(resp) => {
                    // Guard against a zero reading on coarse clocks so the step stays marked.
                    record.retrieval_ms = (start.elapsed().as_secs_f64() * 1e3).max(f64::MIN_POSITIVE);
                    record.retrieved_ids = resp.entries.iter().map(|n| n.id).collect();
                }
                Err(e) => {
                    return StepTrace { sequence, steps, error: Some(format!("step {step}: {e}")) };
                }
            }
        }
        record.inference_ms = config.inference.sample(sequence, step);
        if config.simulate_sleep {
            thread::sleep(Duration::from_secs_f64(record.inference_ms / 1e3));
        }
        steps.push(record);
    }
    StepTrace { sequence, steps, error: None }
}

/// Runs `batch` sequences concurrently over one shared client connection.
pub fn generate(config: &GenerationConfig, client: &SearchClient, source: &dyn VectorSource) -> Result<Vec<StepTrace>> {
    config.validate()?;
    if client.quantizer().is_some_and(|q| q.dim() != source.dim()) {
        return Err(Error::config("vector source dimension differs from the index"));
    }
    Ok(thread::scope(|s| {
        let handles: Vec<_> = (0..config.batch as u64)
            .map(|seq| s.spawn(move || run_sequence(config, client, source, seq)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sequence thread panicked")).collect()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

impl LatencyStats {
    fn from(mut xs: Vec<f64>) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(f64::total_cmp);
        Some(Self {
            count: xs.len(),
            mean_ms: xs.iter().sum::<f64>() / xs.len() as f64,
            p50_ms: percentile(&xs, 0.5),
            p90_ms: percentile(&xs, 0.9),
            p99_ms: percentile(&xs, 0.99),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationReport {
    pub tokens: usize,
    /// Longest sequence; sequences of a batch run side by side.
    pub wall_ms: f64,
    pub tokens_per_sec: f64,
    pub retrieval_steps: Option<LatencyStats>,
    pub inference_steps: Option<LatencyStats>,
    pub aborted_sequences: usize,
}

/// Latency percentiles of retrieval and non-retrieval steps, plus throughput.
pub fn summarize(traces: &[StepTrace]) -> Result<GenerationReport> {
    if traces.is_empty() {
        return Err(Error::Input("no traces to summarize".into()));
    }
    let mut with = Vec::new();
    let mut without = Vec::new();
    let mut wall_ms = 0f64;
    let mut tokens = 0;
    for t in traces {
        let mut seq_ms = 0.0;
        for s in &t.steps {
            if s.retrieval_ms > 0.0 || !s.retrieved_ids.is_empty() {
                with.push(s.latency_ms());
            } else {
                without.push(s.latency_ms());
            }
            seq_ms += s.latency_ms();
        }
        tokens += t.steps.len();
        wall_ms = wall_ms.max(seq_ms);
    }
    let tokens_per_sec = if wall_ms > 0.0 { tokens as f64 / (wall_ms / 1e3) } else { 0.0 };
    Ok(GenerationReport {
        tokens,
        wall_ms,
        tokens_per_sec,
        retrieval_steps: LatencyStats::from(with),
        inference_steps: LatencyStats::from(without),
        aborted_sequences: traces.iter().filter(|t| t.error.is_some()).count(),
    })
}
