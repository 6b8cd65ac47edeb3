//! Distributed IVF-PQ vector search.
//!
//! The engine splits an IVF-PQ index across disaggregated memory nodes. Each
//! node scans its shard with per-list distance lookup tables and selects a
//! local top-K through an approximate hierarchical priority queue (AHPQ). A
//! coordinator broadcasts queries to every node and merges the partial
//! results. Analytic throughput and scalability models, plus brute-force
//! oracles, round out the crate.

pub mod coordinator;
pub mod dataset;
pub mod error;
pub mod io;
pub mod ivf;
pub mod kmeans;
pub mod kselect;
pub mod memnode;
pub mod oracle;
pub mod perfmodel;
pub mod pq;
pub mod protocol;
pub mod ralm;

pub(crate) mod distance;
pub mod net;

pub use error::{Error, Result};
pub use ivf::{CoarseQuantizer, IvfIndex, ProbeSet};
pub use kselect::{AhpqConfig, Neighbor, SystolicQueue};
pub use pq::{DistanceLut, PqCode, PqCodebook};
