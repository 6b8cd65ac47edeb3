//! Disaggregated memory node: one shard of every IVF list, split over
//! memory channels, scanned with per-list lookup tables.

mod service;
mod shard;

pub use service::{serve, MemNodeService};
pub use shard::{placement_offsets, read_frequency_histogram, shard_partition, shard_partition_with_offsets, Shard};

use crate::error::{Error, Result};
use crate::kselect::{size_l1_queue, Ahpq, AhpqConfig, Neighbor};
use crate::protocol::ErrorCode;

/// Upper bound on K accepted by a node.
pub const MAX_K: usize = 1 << 16;

/// How a node sizes its level-one queues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Level-one queues of length K.
    Exact,
    /// Level-one queues sized for the given per-query exactness target.
    Approximate { target_prob: f64 },
}

impl Default for Selection {
    fn default() -> Self {
        Selection::Approximate { target_prob: 0.99 }
    }
}

impl Selection {
    pub fn from_flags(exact: bool, target_prob: f64) -> Self {
        if exact {
            Selection::Exact
        } else {
            Selection::Approximate { target_prob }
        }
    }

    /// AHPQ layout for a node with `num_channels` channels: two level-one
    /// queues per channel.
    pub fn ahpq_config(&self, k: usize, num_channels: usize) -> Result<AhpqConfig> {
        let num_queue = 2 * num_channels;
        match *self {
            Selection::Exact => Ok(AhpqConfig::exact(k, num_queue)),
            Selection::Approximate { target_prob } => Ok(AhpqConfig {
                k,
                num_queue,
                l1_len: size_l1_queue(k, num_queue, target_prob)?,
                target_prob,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeResult {
    pub query_id: u64,
    pub entries: Vec<Neighbor>,
}

pub(crate) fn protocol_error(code: ErrorCode, detail: impl Into<String>) -> Error {
    Error::Protocol { code: code as u32, detail: detail.into() }
}

/// Scans the probed lists of one shard and returns the node-local top-K.
///
/// Each channel streams its slices, list by list in probe order, into its two
/// level-one queues alternately; the level-two queue merges all of them.
pub fn node_query(shard: &Shard, query_id: u64, query: &[f32], list_ids: &[u32], k: usize, selection: Selection) -> Result<NodeResult> {
    if query.len() != shard.dim() {
        return Err(protocol_error(
            ErrorCode::DimensionMismatch,
            format!("query dimension {} != shard dimension {}", query.len(), shard.dim()),
        ));
    }
    if let Some(bad) = list_ids.iter().find(|&&l| l as usize >= shard.nlist()) {
        return Err(protocol_error(ErrorCode::UnknownList, format!("list {bad} not in shard of {} lists", shard.nlist())));
    }
    if k > MAX_K {
        return Err(protocol_error(ErrorCode::InvalidArgument, format!("K={k} exceeds {MAX_K}")));
    }
    if k == 0 {
        return Ok(NodeResult { query_id, entries: Vec::new() });
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(protocol_error(ErrorCode::InvalidArgument, "query contains non-finite values"));
    }
    let config = selection.ahpq_config(k, shard.num_channels())?;
    let codebook = shard.codebook();
    let m = codebook.m();
    let luts = list_ids
        .iter()
        .map(|&l| {
            let residual = shard.quantizer().residual(query, l as usize);
            codebook.build_lut(&residual).map(|t| t.with_ids(query_id, l))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ahpq = Ahpq::new(&config)?;
    for ch in 0..shard.num_channels() {
        let mut t = 0usize;
        for lut in &luts {
            let slice = shard.slice(lut.list_id as usize, ch);
            for (j, &id) in slice.ids.iter().enumerate() {
                let d = lut.adc_distance(slice.code(j, m))?;
                ahpq.insert(2 * ch + (t & 1), d, id)?;
                t += 1;
            }
        }
    }
    Ok(NodeResult { query_id, entries: ahpq.finish() })
}

impl From<&Error> for ErrorCode {
    fn from(e: &Error) -> Self {
        match e {
            Error::Protocol { code, .. } => ErrorCode::from_u32(*code).unwrap_or(ErrorCode::Internal),
            Error::Config(_) | Error::Input(_) | Error::Rejected(_) => ErrorCode::InvalidArgument,
            Error::Corruption(_) => ErrorCode::Corruption,
            Error::NodeUnavailable { .. } => ErrorCode::NodeUnavailable,
            _ => ErrorCode::Internal,
        }
    }
}
