use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::ivf::CoarseQuantizer;
use crate::net::{MuxClient, RequestError};
use crate::protocol::{ClientQuery, ClientResponse, Message};

/// Client library for the coordinator. Holds the coarse quantizer so that
/// the index scan happens on the caller's side.
pub struct SearchClient {
    conn: MuxClient,
    quantizer: Option<CoarseQuantizer>,
    timeout: Duration,
    next_id: AtomicU64,
}

impl SearchClient {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let conn = MuxClient::connect(addr, timeout)
            .map_err(|e| Error::NodeUnavailable { node: addr.to_string(), reason: e.to_string() })?;
        Ok(Self { conn, quantizer: None, timeout, next_id: AtomicU64::new(1) })
    }

    pub fn with_quantizer(mut self, quantizer: CoarseQuantizer) -> Self {
        self.quantizer = Some(quantizer);
        self
    }

    pub fn quantizer(&self) -> Option<&CoarseQuantizer> {
        self.quantizer.as_ref()
    }

    /// Sends a query whose lists were already chosen.
    pub fn query(&self, query_id: u64, query: &[f32], list_ids: &[u32], k: usize, payloads: bool) -> Result<ClientResponse> {
        let msg = Message::ClientQuery(ClientQuery {
            query_id,
            k: k as u32,
            payload_requested: payloads,
            query: query.to_vec(),
            list_ids: list_ids.to_vec(),
        });
        let remote = |reason: String| Error::NodeUnavailable { node: self.conn.addr().to_string(), reason };
        match self.conn.request(&msg, self.timeout) {
            Ok(Message::ClientResponse(r)) => Ok(r),
            Ok(Message::Error(e)) => Err(Error::Protocol { code: e.code, detail: e.detail }),
            Ok(other) => Err(remote(format!("unexpected reply {other:?}"))),
            Err(RequestError::DuplicateId(id)) => Err(Error::Input(format!("query id {id} already in flight"))),
            Err(e) => Err(remote(e.to_string())),
        }
    }

    /// Scans the local quantizer for `nprobe` lists, then queries.
    pub fn search(&self, query: &[f32], nprobe: usize, k: usize, payloads: bool) -> Result<ClientResponse> {
        let q = self
            .quantizer
            .as_ref()
            .ok_or_else(|| Error::config("search client has no coarse quantizer loaded"))?;
        let probe = q.scan(query, nprobe)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.query(id, query, &probe.list_ids, k, payloads)
    }
}
