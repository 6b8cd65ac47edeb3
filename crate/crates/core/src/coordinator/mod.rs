//! Cluster coordinator: broadcast to memory nodes, merge partial top-K lists,
//! resolve payloads and answer clients.

mod client;
mod payload;
mod service;

pub use client::SearchClient;
pub use payload::{PayloadStore, PayloadWriter};
pub use service::{serve_clients, CoordinatorService};

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kselect::Neighbor;
use crate::memnode::NodeResult;
use crate::net::{MuxClient, RequestError};
use crate::protocol::{Message, QueryMessage};

fn default_k() -> usize {
    100
}

fn default_nprobe() -> usize {
    32
}

fn default_timeout_ms() -> u64 {
    5_000
}

/// JSON cluster description: `{nodes, k, nprobe, timeout_ms, payload_store}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub nodes: Vec<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_nprobe")]
    pub nprobe: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub payload_store: Option<PathBuf>,
}

impl ClusterConfig {
    pub fn new(nodes: Vec<String>) -> Self {
        Self { nodes, k: default_k(), nprobe: default_nprobe(), timeout_ms: default_timeout_ms(), payload_store: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::config("cluster needs at least one node"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.nodes.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::config(format!("duplicate node address {dup}")));
        }
        if self.timeout_ms == 0 {
            return Err(Error::config("timeout_ms must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("cluster config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

struct NodeLink {
    addr: String,
    conn: Mutex<Option<Arc<MuxClient>>>,
}

impl NodeLink {
    fn get(&self, timeout: Duration) -> std::result::Result<Arc<MuxClient>, String> {
        let mut slot = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(c) = slot.as_ref() {
            return Ok(Arc::clone(c));
        }
        let c = Arc::new(MuxClient::connect(&self.addr, timeout).map_err(|e| e.to_string())?);
        *slot = Some(Arc::clone(&c));
        Ok(c)
    }

    fn reset(&self) {
        self.conn.lock().unwrap_or_else(|e| e.into_inner()).take();
    }
}

/// Connections to every memory node of the cluster.
pub struct Cluster {
    links: Vec<NodeLink>,
    timeout: Duration,
    next_id: AtomicU64,
}

impl Cluster {
    /// Nodes are connected lazily on first use.
    pub fn new(config: &ClusterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            links: config
                .nodes
                .iter()
                .map(|a| NodeLink { addr: a.clone(), conn: Mutex::new(None) })
                .collect(),
            timeout: Duration::from_millis(config.timeout_ms),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.links.len()
    }

    /// Fresh id for node-facing traffic, unique within this cluster handle.
    pub fn next_query_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    /// Sends the same query to every node and collects one result per node.
    /// Any node failing or exceeding the timeout fails the whole query.
    pub fn broadcast_query(&self, query_id: u64, query: &[f32], list_ids: &[u32], k: usize) -> Result<Vec<NodeResult>> {
        let msg = Message::Query(QueryMessage { query_id, k: k as u32, query: query.to_vec(), list_ids: list_ids.to_vec() });
        let deadline = Instant::now() + self.timeout;
        let unavailable = |link: &NodeLink, reason: String| Error::NodeUnavailable { node: link.addr.clone(), reason };

        let mut inflight = Vec::with_capacity(self.links.len());
        for link in &self.links {
            let conn = link.get(self.timeout).map_err(|r| unavailable(link, r))?;
            match conn.submit(&msg) {
                Ok(rx) => inflight.push((link, conn, rx)),
                Err(e) => {
                    link.reset();
                    return Err(unavailable(link, e.to_string()));
                }
            }
        }
        let mut out = Vec::with_capacity(inflight.len());
        for (link, conn, rx) in inflight {
            let left = deadline.saturating_duration_since(Instant::now());
            match conn.wait(query_id, &rx, left) {
                Ok(Message::Result(r)) => out.push(NodeResult { query_id: r.query_id, entries: r.entries }),
                Ok(Message::Error(e)) => {
                    return Err(Error::Protocol { code: e.code, detail: format!("{}: {}", link.addr, e.detail) })
                }
                Ok(other) => return Err(unavailable(link, format!("unexpected reply {other:?}"))),
                Err(RequestError::Timeout) => {
                    return Err(unavailable(link, format!("no reply within {} ms", self.timeout.as_millis())))
                }
                Err(e) => {
                    link.reset();
                    return Err(unavailable(link, e.to_string()));
                }
            }
        }
        Ok(out)
    }
}

/// The `k` smallest entries across all node results, ordered by `(distance, id)`.
pub fn merge_results<'a, I>(node_results: I, k: usize) -> Result<Vec<Neighbor>>
where
    I: IntoIterator<Item = &'a [Neighbor]>,
{
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for entries in node_results {
        for n in entries {
            if !seen.insert(n.id) {
                return Err(Error::corruption(format!("vector id {} returned by more than one node", n.id)));
            }
            all.push(*n);
        }
    }
    all.sort_unstable();
    all.truncate(k);
    Ok(all)
}

/// Payloads for `ids`, in order.
pub fn lookup_payloads(store: &PayloadStore, ids: &[u64]) -> Result<Vec<Vec<u8>>> {
    ids.iter().map(|&id| store.get(id)).collect()
}
