//! Inverted-file index: coarse quantizer, list assignment and probing.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::distance::{l2_sq, nearest_row};
use crate::error::{Error, Result};
use crate::io::{checked_len, expect_magic, read_f32s, read_u32, read_u64, write_f32s, write_u32, write_u64};
use crate::kmeans::{self, KMeansParams};
use crate::pq::PqCodebook;

const INDEX_MAGIC: &[u8; 4] = b"CIVF";

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseQuantizer {
    dim: usize,
    /// Row-major `nlist × dim`.
    centroids: Vec<f32>,
}

/// Lists to scan for one query, nearest centroid first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSet {
    pub list_ids: Vec<u32>,
}

/// `√n` rounded to the nearest power of two.
pub fn default_nlist(n: usize) -> usize {
    if n <= 1 {
        return 1;
    }
    let exp = (n as f64).sqrt().log2().round().max(0.0) as u32;
    1usize << exp
}

pub fn train_ivf(vectors: &[f32], dim: usize, params: &KMeansParams) -> Result<CoarseQuantizer> {
    let res = kmeans::train(vectors, dim, params)?;
    CoarseQuantizer::from_centroids(dim, res.centroids)
}

impl CoarseQuantizer {
    pub fn from_centroids(dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::config("coarse quantizer needs at least one centroid of non-zero dimension"));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::corruption("coarse centroids contain non-finite values"));
        }
        Ok(Self { dim, centroids })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nlist(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, list: usize) -> &[f32] {
        &self.centroids[list * self.dim..(list + 1) * self.dim]
    }

    fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::config(format!(
                "vector has dimension {}, index expects {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Nearest list by squared L2, lowest index on ties.
    pub fn assign(&self, v: &[f32]) -> Result<u32> {
        self.check_dim(v)?;
        Ok(nearest_row(&self.centroids, self.dim, v).0 as u32)
    }

    /// The `min(nprobe, nlist)` lists closest to `query`.
    pub fn scan(&self, query: &[f32], nprobe: usize) -> Result<ProbeSet> {
        self.check_dim(query)?;
        if nprobe == 0 {
            return Err(Error::config("nprobe must be at least 1"));
        }
        let mut scored: Vec<(f32, u32)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, c)| (l2_sq(query, c), i as u32))
            .collect();
        let take = nprobe.min(scored.len());
        let cmp = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, cmp);
            scored.truncate(take);
        }
        scored.sort_unstable_by(cmp);
        Ok(ProbeSet { list_ids: scored.into_iter().map(|(_, i)| i).collect() })
    }

    pub fn residual(&self, v: &[f32], list: usize) -> Vec<f32> {
        v.iter().zip(self.centroid(list)).map(|(a, b)| a - b).collect()
    }
}

/// Contiguous `(id, code)` storage for one IVF list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IvfList {
    pub ids: Vec<u64>,
    /// `ids.len() × m` code bytes.
    pub codes: Vec<u8>,
}

impl IvfList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn code(&self, j: usize, m: usize) -> &[u8] {
        &self.codes[j * m..(j + 1) * m]
    }

    pub fn push(&mut self, id: u64, code: &[u8]) {
        self.ids.push(id);
        self.codes.extend_from_slice(code);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    quantizer: CoarseQuantizer,
    codebook: PqCodebook,
    lists: Vec<IvfList>,
}

impl IvfIndex {
    /// Assigns and residual-encodes every vector. `vectors` is row-major `ids.len() × dim`.
    pub fn build(quantizer: CoarseQuantizer, codebook: PqCodebook, ids: &[u64], vectors: &[f32]) -> Result<Self> {
        let dim = quantizer.dim();
        if codebook.dim() != dim {
            return Err(Error::config(format!(
                "codebook dimension {} != quantizer dimension {dim}",
                codebook.dim()
            )));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::config("vector data does not match id count"));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Ingestion(format!("duplicate vector id {dup}")));
        }
        let m = codebook.m();
        let encoded: Vec<(u32, Vec<u8>)> = vectors
            .par_chunks_exact(dim)
            .map(|v| {
                let list = quantizer.assign(v)?;
                let code = codebook.encode(&quantizer.residual(v, list as usize))?;
                Ok((list, code.0))
            })
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_unstable_by_key(|&i| ids[i]);
        let mut lists = vec![IvfList::default(); quantizer.nlist()];
        for i in order {
            let (list, code) = &encoded[i];
            lists[*list as usize].push(ids[i], code);
        }
        debug_assert!(lists.iter().all(|l| l.codes.len() == l.len() * m));
        Ok(Self { quantizer, codebook, lists })
    }

    pub fn from_parts(quantizer: CoarseQuantizer, codebook: PqCodebook, lists: Vec<IvfList>) -> Result<Self> {
        if lists.len() != quantizer.nlist() {
            return Err(Error::corruption("list count does not match quantizer"));
        }
        if codebook.dim() != quantizer.dim() {
            return Err(Error::corruption("codebook and quantizer dimensions differ"));
        }
        let m = codebook.m();
        if lists.iter().any(|l| l.codes.len() != l.len() * m) {
            return Err(Error::corruption("list code storage does not match id count"));
        }
        Ok(Self { quantizer, codebook, lists })
    }

    pub fn quantizer(&self) -> &CoarseQuantizer {
        &self.quantizer
    }

    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub fn lists(&self) -> &[IvfList] {
        &self.lists
    }

    pub fn list(&self, i: usize) -> &IvfList {
        &self.lists[i]
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn dim(&self) -> usize {
        self.quantizer.dim()
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(IvfList::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the index body; the codebook is stored separately.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(INDEX_MAGIC)?;
        write_u32(w, self.nlist() as u32)?;
        write_u32(w, self.dim() as u32)?;
        write_f32s(w, self.quantizer.centroids())?;
        for list in &self.lists {
            write_list(w, list, self.codebook.m())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, codebook: PqCodebook) -> Result<Self> {
        expect_magic(r, INDEX_MAGIC)?;
        let nlist = checked_len(read_u32(r)? as u64, 1 << 24, "list")?;
        let dim = read_u32(r)? as usize;
        if nlist == 0 || dim == 0 {
            return Err(Error::corruption("index header has zero lists or dimension"));
        }
        let n = checked_len((nlist * dim) as u64, 1 << 30, "centroid value")?;
        let quantizer = CoarseQuantizer::from_centroids(dim, read_f32s(r, n)?)?;
        let m = codebook.m();
        let lists = (0..nlist).map(|_| read_list(r, m)).collect::<Result<Vec<_>>>()?;
        Self::from_parts(quantizer, codebook, lists)
    }

    pub fn save(&self, index_path: impl AsRef<Path>, codebook_path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(index_path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        self.codebook.save(codebook_path)
    }

    pub fn load(index_path: impl AsRef<Path>, codebook_path: impl AsRef<Path>) -> Result<Self> {
        let codebook = PqCodebook::load(codebook_path)?;
        Self::read_from(&mut BufReader::new(File::open(index_path)?), codebook)
    }
}

/// Reads only the coarse quantizer from the head of an index file.
pub fn read_quantizer(index_path: impl AsRef<Path>) -> Result<CoarseQuantizer> {
    let mut r = BufReader::new(File::open(index_path)?);
    expect_magic(&mut r, INDEX_MAGIC)?;
    let nlist = checked_len(read_u32(&mut r)? as u64, 1 << 24, "list")?;
    let dim = read_u32(&mut r)? as usize;
    let n = checked_len((nlist * dim) as u64, 1 << 30, "centroid value")?;
    CoarseQuantizer::from_centroids(dim, read_f32s(&mut r, n)?)
}

pub(crate) fn write_list<W: Write>(w: &mut W, list: &IvfList, m: usize) -> Result<()> {
    write_u64(w, list.len() as u64)?;
    for (j, id) in list.ids.iter().enumerate() {
        write_u64(w, *id)?;
        w.write_all(list.code(j, m))?;
    }
    Ok(())
}

pub(crate) fn read_list<R: Read>(r: &mut R, m: usize) -> Result<IvfList> {
    let count = checked_len(read_u64(r)?, 1 << 32, "list entry")?;
    let mut list = IvfList { ids: Vec::with_capacity(count.min(1 << 20)), codes: Vec::new() };
    let mut code = vec![0u8; m];
    for _ in 0..count {
        let id = read_u64(r)?;
        r.read_exact(&mut code)?;
        list.push(id, &code);
    }
    Ok(list)
}
