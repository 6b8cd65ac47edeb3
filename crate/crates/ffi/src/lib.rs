//! C ABI over the `nearmem` engine.
//!
//! Every function returns an [`NmStatus`]; on failure the message is kept in
//! a thread-local buffer readable through [`nm_last_error`]. Handles are
//! opaque pointers owned by the caller and released with the matching
//! `*_free` function. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::time::Duration;

use nearmem::coordinator::SearchClient;
use nearmem::ivf::read_quantizer;
use nearmem::kselect::size_l1_queue;
use nearmem::oracle::exact_pq_search;
use nearmem::perfmodel::{system_throughput, ThroughputInputs};
use nearmem::{Error, IvfIndex, Neighbor};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmStatus {
    Ok = 0,
    /// Null pointer, bad length or out-of-range value.
    InvalidArgument = 1,
    /// Configuration or input rejected by the engine.
    Config = 2,
    Io = 3,
    /// A remote service failed or answered with an error.
    Remote = 4,
    /// A file or reply failed validation.
    Corruption = 5,
    /// A panic was caught; the handle should not be reused.
    Internal = 6,
}

/// Modeled throughputs in tokens per second.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NmThroughput {
    pub inference: f64,
    pub retrieval: f64,
    pub system: f64,
}

/// A loaded IVF-PQ index.
pub struct NmIndex(IvfIndex);

/// A connection to a coordinator.
pub struct NmClient(SearchClient);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> NmStatus {
    match e {
        Error::Io(_) => NmStatus::Io,
        Error::Corruption(_) => NmStatus::Corruption,
        Error::Protocol { .. } | Error::NodeUnavailable { .. } => NmStatus::Remote,
        _ => NmStatus::Config,
    }
}

struct Fail(NmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(NmStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NmStatus::Internal
        }
    }
}

unsafe fn path<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn floats<'a>(p: *const f32, len: usize) -> Result<&'a [f32], Fail> {
    if p.is_null() {
        return Err(invalid("query pointer is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Copies `found` into the caller's `capacity`-long arrays.
unsafe fn write_neighbors(found: &[Neighbor], ids: *mut u64, dists: *mut f32, capacity: usize, out_len: *mut usize) -> Result<(), Fail> {
    if ids.is_null() || dists.is_null() || out_len.is_null() {
        return Err(invalid("output pointer is null"));
    }
    let n = found.len().min(capacity);
    let ids = slice::from_raw_parts_mut(ids, n);
    let dists = slice::from_raw_parts_mut(dists, n);
    for (i, nb) in found.iter().take(n).enumerate() {
        ids[i] = nb.id;
        dists[i] = nb.distance;
    }
    *out_len = n;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn nm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads an index and its codebook file.
///
/// # Safety
/// Paths must be null-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nm_index_load(index_path: *const c_char, codebook_path: *const c_char, out: *mut *mut NmIndex) -> NmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let index = IvfIndex::load(path(index_path, "index path")?, path(codebook_path, "codebook path")?)?;
        *out = Box::into_raw(Box::new(NmIndex(index)));
        Ok(())
    })
}

/// # Safety
/// `index` must come from [`nm_index_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nm_index_free(index: *mut NmIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Vector dimension, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nm_index_dim(index: *const NmIndex) -> u32 {
    index.as_ref().map_or(0, |i| i.0.dim() as u32)
}

/// Number of IVF lists, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nm_index_nlist(index: *const NmIndex) -> u32 {
    index.as_ref().map_or(0, |i| i.0.nlist() as u32)
}

/// Number of indexed vectors, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nm_index_len(index: *const NmIndex) -> u64 {
    index.as_ref().map_or(0, |i| i.0.len() as u64)
}

/// Writes the `min(nprobe, capacity)` nearest list ids to `out_lists`.
///
/// # Safety
/// `query` must hold `dim` floats and `out_lists` `capacity` slots.
#[no_mangle]
pub unsafe extern "C" fn nm_index_scan(
    index: *const NmIndex,
    query: *const f32,
    dim: usize,
    nprobe: u32,
    out_lists: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> NmStatus {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| invalid("index is null"))?;
        if out_lists.is_null() || out_len.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let probe = index.0.quantizer().scan(floats(query, dim)?, (nprobe as usize).min(capacity))?;
        slice::from_raw_parts_mut(out_lists, probe.list_ids.len()).copy_from_slice(&probe.list_ids);
        *out_len = probe.list_ids.len();
        Ok(())
    })
}

/// Exact top-`k` over the probed lists by full sort, in process.
///
/// # Safety
/// `query` must hold `dim` floats; `ids` and `dists` must hold `capacity`
/// elements each.
#[no_mangle]
pub unsafe extern "C" fn nm_index_search_exact(
    index: *const NmIndex,
    query: *const f32,
    dim: usize,
    nprobe: u32,
    k: u32,
    ids: *mut u64,
    dists: *mut f32,
    capacity: usize,
    out_len: *mut usize,
) -> NmStatus {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| invalid("index is null"))?;
        let found = exact_pq_search(&index.0, floats(query, dim)?, nprobe as usize, k as usize)?;
        write_neighbors(&found, ids, dists, capacity, out_len)
    })
}

/// Connects to a coordinator. The coarse quantizer is read from the head of
/// `index_path` so that searches can pick their lists locally.
///
/// # Safety
/// Strings must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nm_client_connect(
    addr: *const c_char,
    index_path: *const c_char,
    timeout_ms: u32,
    out: *mut *mut NmClient,
) -> NmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let quantizer = read_quantizer(path(index_path, "index path")?)?;
        let client = SearchClient::connect(path(addr, "address")?, Duration::from_millis(timeout_ms.max(1) as u64))?;
        *out = Box::into_raw(Box::new(NmClient(client.with_quantizer(quantizer))));
        Ok(())
    })
}

/// Distributed top-`k` through the coordinator.
///
/// # Safety
/// As for [`nm_index_search_exact`].
#[no_mangle]
pub unsafe extern "C" fn nm_client_search(
    client: *const NmClient,
    query: *const f32,
    dim: usize,
    nprobe: u32,
    k: u32,
    ids: *mut u64,
    dists: *mut f32,
    capacity: usize,
    out_len: *mut usize,
) -> NmStatus {
    guard(|| {
        let client = client.as_ref().ok_or_else(|| invalid("client is null"))?;
        let resp = client.0.search(floats(query, dim)?, nprobe as usize, k as usize, false)?;
        write_neighbors(&resp.entries, ids, dists, capacity, out_len)
    })
}

/// # Safety
/// `client` must come from [`nm_client_connect`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nm_client_free(client: *mut NmClient) {
    if !client.is_null() {
        drop(Box::from_raw(client));
    }
}

/// Level-one queue length meeting `target_prob` for `k` results over
/// `num_queue` queues.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nm_size_l1_queue(k: u32, num_queue: u32, target_prob: f64, out: *mut u32) -> NmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = size_l1_queue(k as usize, num_queue as usize, target_prob)? as u32;
        Ok(())
    })
}

/// Modeled throughput for `n_inference` inference and `n_retrieval`
/// retrieval accelerators. Latencies are per batch, in milliseconds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nm_system_throughput(
    interval: u32,
    batch: u32,
    n_inference: u32,
    n_retrieval: u32,
    inference_ms: f64,
    retrieval_ms: f64,
    out: *mut NmThroughput,
) -> NmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let t = system_throughput(&ThroughputInputs { interval, batch, n_inference, n_retrieval, inference_ms, retrieval_ms })?;
        *out = NmThroughput { inference: t.inference, retrieval: t.retrieval, system: t.system };
        Ok(())
    })
}
