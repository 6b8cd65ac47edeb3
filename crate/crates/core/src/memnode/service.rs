use std::net::ToSocketAddrs;
use std::sync::Arc;

use crate::error::Result;
use crate::net::{default_workers, spawn_server, Handler, Replier, ServerHandle, WorkerPool};
use crate::protocol::{ErrorCode, ErrorMessage, Message, ResultMessage};

use super::{node_query, Selection, Shard};

/// Answers `QueryMessage`s against one shard. Queries run concurrently on a
/// worker pool and replies may leave in any order.
pub struct MemNodeService {
    shard: Arc<Shard>,
    selection: Selection,
    pool: WorkerPool,
}

impl MemNodeService {
    pub fn new(shard: Shard, selection: Selection) -> Self {
        Self::with_workers(shard, selection, default_workers())
    }

    pub fn with_workers(shard: Shard, selection: Selection, workers: usize) -> Self {
        Self { shard: Arc::new(shard), selection, pool: WorkerPool::new(workers, "memnode") }
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }
}

impl Handler for MemNodeService {
    fn handle(&self, msg: Message, reply: Replier) {
        let q = match msg {
            Message::Query(q) => q,
            other => {
                let _ = reply.send(&Message::Error(ErrorMessage {
                    query_id: other.query_id(),
                    code: ErrorCode::UnknownMessageType as u32,
                    detail: "memory nodes only accept query messages".into(),
                }));
                return;
            }
        };
        let shard = Arc::clone(&self.shard);
        let selection = self.selection;
        self.pool.execute(move || {
            let out = match node_query(&shard, q.query_id, &q.query, &q.list_ids, q.k as usize, selection) {
                Ok(r) => Message::Result(ResultMessage { query_id: r.query_id, entries: r.entries }),
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

/// Starts serving `shard` on `addr` in background threads.
pub fn serve(shard: Shard, addr: impl ToSocketAddrs, selection: Selection) -> Result<ServerHandle> {
    Ok(spawn_server(addr, Arc::new(MemNodeService::new(shard, selection)))?)
}
