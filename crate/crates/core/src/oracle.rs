//! Brute-force references and recall metrics.

use std::collections::{BinaryHeap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{expect_magic, read_u32, read_u64, write_u32, write_u64};
use crate::ivf::IvfIndex;
use crate::kselect::Neighbor;

const TRUTH_MAGIC: &[u8; 4] = b"CGT1";

/// Exact nearest ids per query, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub k: usize,
    pub ids: Vec<Vec<u64>>,
}

#[derive(PartialEq)]
struct Scored(f64, u64);

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn l2_sq_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

/// Exact squared-L2 top-K by linear scan; database row `i` has id `i`.
pub fn exact_knn(database: &[f32], queries: &[f32], dim: usize, k: usize) -> Result<GroundTruth> {
    let ids: Vec<u64> = (0..(database.len() / dim.max(1)) as u64).collect();
    exact_knn_with_ids(database, &ids, queries, dim, k)
}

pub fn exact_knn_with_ids(database: &[f32], ids: &[u64], queries: &[f32], dim: usize, k: usize) -> Result<GroundTruth> {
    if dim == 0 || database.len() != ids.len() * dim || !queries.len().is_multiple_of(dim) {
        return Err(Error::config("database, ids and queries disagree on dimensionality"));
    }
    let out = queries
        .par_chunks_exact(dim)
        .map(|q| {
            let mut heap = BinaryHeap::with_capacity(k + 1);
            for (row, &id) in database.chunks_exact(dim).zip(ids) {
                let s = Scored(l2_sq_f64(q, row), id);
                if heap.len() < k {
                    heap.push(s);
                } else if let Some(mut top) = heap.peek_mut() {
                    if s < *top {
                        *top = s;
                    }
                }
            }
            heap.into_sorted_vec().into_iter().map(|s| s.1).collect()
        })
        .collect();
    Ok(GroundTruth { k, ids: out })
}

/// Mean over queries of `|results ∩ truth| / K`.
pub fn recall_at_k(results: &[Vec<u64>], truth: &GroundTruth, k: usize) -> Result<f64> {
    if results.len() != truth.ids.len() {
        return Err(Error::Input(format!("{} result lists for {} queries", results.len(), truth.ids.len())));
    }
    if k == 0 {
        return Err(Error::Input("K must be positive".into()));
    }
    if results.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (r, t) in results.iter().zip(&truth.ids) {
        if r.len() > k {
            return Err(Error::Input(format!("result list of length {} exceeds K={k}", r.len())));
        }
        let t: HashSet<u64> = t.iter().take(k).copied().collect();
        let hits = r.iter().collect::<HashSet<_>>().into_iter().filter(|id| t.contains(id)).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / results.len() as f64)
}

/// Fraction of queries whose true nearest neighbor appears in the results.
pub fn recall1_at_k(results: &[Vec<u64>], truth: &GroundTruth) -> Result<f64> {
    if results.len() != truth.ids.len() {
        return Err(Error::Input(format!("{} result lists for {} queries", results.len(), truth.ids.len())));
    }
    if results.is_empty() {
        return Ok(0.0);
    }
    let hits = results
        .iter()
        .zip(&truth.ids)
        .filter(|(r, t)| t.first().is_some_and(|nn| r.contains(nn)))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// ADC-scores every code in the probed lists and sorts exactly.
pub fn exact_pq_search(index: &IvfIndex, query: &[f32], nprobe: usize, k: usize) -> Result<Vec<Neighbor>> {
    let probe = index.quantizer().scan(query, nprobe)?;
    let m = index.codebook().m();
    let mut all = Vec::new();
    for &l in &probe.list_ids {
        let residual = index.quantizer().residual(query, l as usize);
        let lut = index.codebook().build_lut(&residual)?;
        let list = index.list(l as usize);
        for (j, &id) in list.ids.iter().enumerate() {
            all.push(Neighbor::new(id, lut.adc_distance(list.code(j, m))?));
        }
    }
    all.sort_unstable();
    all.truncate(k);
    Ok(all)
}

impl GroundTruth {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TRUTH_MAGIC)?;
        write_u32(w, self.k as u32)?;
        for ids in &self.ids {
            if ids.len() != self.k {
                return Err(Error::Input(format!("query has {} ids, ground truth K is {}", ids.len(), self.k)));
            }
            for &id in ids {
                write_u64(w, id)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, TRUTH_MAGIC)?;
        let k = read_u32(r)? as usize;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if k == 0 || rest.len() % (8 * k) != 0 {
            return Err(Error::corruption("ground-truth body is not a whole number of queries"));
        }
        let mut cur = rest.as_slice();
        let nq = rest.len() / (8 * k);
        let ids = (0..nq)
            .map(|_| (0..k).map(|_| read_u64(&mut cur)).collect::<std::io::Result<Vec<_>>>())
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(Self { k, ids })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
