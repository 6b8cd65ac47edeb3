use std::net::ToSocketAddrs;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::net::{default_workers, spawn_server, Handler, Replier, ServerHandle, WorkerPool};
use crate::protocol::{ClientQuery, ClientResponse, ErrorCode, ErrorMessage, Message};

use super::{lookup_payloads, merge_results, Cluster, ClusterConfig, PayloadStore};

/// Client-facing side of the coordinator.
///
/// Each client query is re-issued to the nodes under a fresh cluster-wide id;
/// the reply goes back on the originating connection under the client's id.
pub struct CoordinatorService {
    cluster: Arc<Cluster>,
    payloads: Option<Arc<PayloadStore>>,
    pool: WorkerPool,
}

impl CoordinatorService {
    pub fn new(config: &ClusterConfig) -> Result<Self> {
        let payloads = match &config.payload_store {
            Some(p) => Some(Arc::new(PayloadStore::open(p)?)),
            None => None,
        };
        Ok(Self::with_parts(Cluster::new(config)?, payloads))
    }

    pub fn with_parts(cluster: Cluster, payloads: Option<Arc<PayloadStore>>) -> Self {
        Self { cluster: Arc::new(cluster), payloads, pool: WorkerPool::new(default_workers() * 2, "coord") }
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }
}

fn answer(cluster: &Cluster, payloads: Option<&PayloadStore>, q: &ClientQuery) -> Result<ClientResponse> {
    let internal = cluster.next_query_id();
    let results = cluster.broadcast_query(internal, &q.query, &q.list_ids, q.k as usize)?;
    let entries = merge_results(results.iter().map(|r| r.entries.as_slice()), q.k as usize)?;
    let payloads = if q.payload_requested {
        let store = payloads.ok_or_else(|| Error::Protocol {
            code: ErrorCode::InvalidArgument as u32,
            detail: "coordinator has no payload store".into(),
        })?;
        let ids: Vec<u64> = entries.iter().map(|n| n.id).collect();
        Some(lookup_payloads(store, &ids)?)
    } else {
        None
    };
    Ok(ClientResponse { query_id: q.query_id, entries, payloads })
}

impl Handler for CoordinatorService {
    fn handle(&self, msg: Message, reply: Replier) {
        let q = match msg {
            Message::ClientQuery(q) => q,
            other => {
                let _ = reply.send(&Message::Error(ErrorMessage {
                    query_id: other.query_id(),
                    code: ErrorCode::UnknownMessageType as u32,
                    detail: "coordinator only accepts client queries".into(),
                }));
                return;
            }
        };
        let cluster = Arc::clone(&self.cluster);
        let payloads = self.payloads.clone();
        self.pool.execute(move || {
            let out = match answer(&cluster, payloads.as_deref(), &q) {
                Ok(r) => Message::ClientResponse(r),
                Err(e) => Message::Error(ErrorMessage {
                    query_id: q.query_id,
                    code: ErrorCode::from(&e) as u32,
                    detail: e.to_string(),
                }),
            };
            let _ = reply.send(&out);
        });
    }
}

pub fn serve_clients(config: &ClusterConfig, addr: impl ToSocketAddrs) -> Result<ServerHandle> {
    Ok(spawn_server(addr, Arc::new(CoordinatorService::new(config)?))?)
}
