use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{checked_len, expect_magic, read_f32s, read_u32, write_f32s, write_u32};
use crate::ivf::{read_list, write_list, CoarseQuantizer, IvfIndex, IvfList};
use crate::pq::PqCodebook;

const SHARD_MAGIC: &[u8; 4] = b"CSHD";

/// One memory node's slice of every IVF list, split across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    node_id: u32,
    num_nodes: u32,
    quantizer: CoarseQuantizer,
    codebook: PqCodebook,
    /// `slices[list][channel]`
    slices: Vec<Vec<IvfList>>,
}

/// Round-robin split: entry `j` of a list goes to node `j mod n`, channel `(j div n) mod c`.
pub fn shard_partition(index: &IvfIndex, num_nodes: usize, num_channels: usize) -> Result<Vec<Shard>> {
    shard_partition_with_offsets(index, num_nodes, num_channels, &vec![0; index.nlist()])
}

/// Round-robin split with each list's positions rotated by `offsets[list]`.
pub fn shard_partition_with_offsets(index: &IvfIndex, num_nodes: usize, num_channels: usize, offsets: &[usize]) -> Result<Vec<Shard>> {
    if num_nodes == 0 || num_channels == 0 {
        return Err(Error::config("need at least one node and one channel"));
    }
    if offsets.len() != index.nlist() {
        return Err(Error::config("one placement offset per list required"));
    }
    let m = index.codebook().m();
    let mut shards: Vec<Shard> = (0..num_nodes)
        .map(|node| Shard {
            node_id: node as u32,
            num_nodes: num_nodes as u32,
            quantizer: index.quantizer().clone(),
            codebook: index.codebook().clone(),
            slices: vec![vec![IvfList::default(); num_channels]; index.nlist()],
        })
        .collect();
    for (l, list) in index.lists().iter().enumerate() {
        for (j, &id) in list.ids.iter().enumerate() {
            let p = j + offsets[l];
            let node = p % num_nodes;
            let ch = (p / num_nodes) % num_channels;
            shards[node].slices[l][ch].push(id, list.code(j, m));
        }
    }
    Ok(shards)
}

/// Chooses per-list rotations so that hot lists spread their load across
/// (node, channel) slots. Lists are placed hottest first; each picks the
/// rotation minimizing the most-loaded slot, then the sum of squared slot
/// loads, then the rotation itself.
pub fn placement_offsets(index: &IvfIndex, num_nodes: usize, num_channels: usize, frequency: &[u64]) -> Result<Vec<usize>> {
    if num_nodes == 0 || num_channels == 0 {
        return Err(Error::config("need at least one node and one channel"));
    }
    if frequency.len() != index.nlist() {
        return Err(Error::config(format!(
            "frequency histogram has {} lists, index has {}",
            frequency.len(),
            index.nlist()
        )));
    }
    let slots = num_nodes * num_channels;
    let slot_of = |p: usize| (p % num_nodes) * num_channels + (p / num_nodes) % num_channels;
    let mut load = vec![0u128; slots];
    let mut offsets = vec![0usize; index.nlist()];
    let mut order: Vec<usize> = (0..index.nlist()).collect();
    order.sort_by(|&a, &b| frequency[b].cmp(&frequency[a]).then(a.cmp(&b)));
    for l in order {
        let len = index.list(l).len();
        if frequency[l] == 0 || len == 0 {
            continue;
        }
        let w = frequency[l] as u128;
        let mut best = ((u128::MAX, u128::MAX), 0usize);
        for off in 0..slots {
            let mut trial = load.clone();
            // A run of `len` positions covers each slot `len / slots` times plus a partial lap.
            for p in off..off + len % slots {
                trial[slot_of(p)] += w;
            }
            let peak = trial.iter().max().copied().unwrap_or(0);
            // Equal peaks are common, so prefer the rotation that lands on the emptiest slots.
            let spread = trial.iter().fold(0u128, |acc, &x| acc.saturating_add(x.saturating_mul(x)));
            if (peak, spread) < best.0 {
                best = ((peak, spread), off);
            }
        }
        let full = (len / slots) as u128 * w;
        for s in load.iter_mut() {
            *s += full;
        }
        for p in best.1..best.1 + len % slots {
            load[slot_of(p)] += w;
        }
        offsets[l] = best.1;
    }
    Ok(offsets)
}

/// Parses a `list_id,count` CSV (optional header) into a dense histogram.
pub fn read_frequency_histogram(path: impl AsRef<Path>, nlist: usize) -> Result<Vec<u64>> {
    let mut freq = vec![0u64; nlist];
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let (l, c) = line
            .split_once(',')
            .ok_or_else(|| Error::Input(format!("line {}: expected list_id,count", n + 1)))?;
        let l: usize = l.trim().parse().map_err(|_| Error::Input(format!("line {}: bad list id", n + 1)))?;
        let c: u64 = c.trim().parse().map_err(|_| Error::Input(format!("line {}: bad count", n + 1)))?;
        if l >= nlist {
            return Err(Error::Input(format!("line {}: list {l} out of range", n + 1)));
        }
        freq[l] += c;
    }
    Ok(freq)
}

impl Shard {
    pub fn node_id(&self) -> u32 {
        self.node_id
    }

    pub fn num_nodes(&self) -> u32 {
        self.num_nodes
    }

    pub fn num_channels(&self) -> usize {
        self.slices.first().map_or(1, Vec::len)
    }

    pub fn nlist(&self) -> usize {
        self.slices.len()
    }

    pub fn dim(&self) -> usize {
        self.quantizer.dim()
    }

    pub fn quantizer(&self) -> &CoarseQuantizer {
        &self.quantizer
    }

    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub fn slice(&self, list: usize, channel: usize) -> &IvfList {
        &self.slices[list][channel]
    }

    /// Number of entries this shard holds.
    pub fn len(&self) -> usize {
        self.slices.iter().flatten().map(IvfList::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SHARD_MAGIC)?;
        write_u32(w, self.node_id)?;
        write_u32(w, self.num_nodes)?;
        write_u32(w, self.num_channels() as u32)?;
        write_u32(w, self.nlist() as u32)?;
        write_u32(w, self.dim() as u32)?;
        write_f32s(w, self.quantizer.centroids())?;
        self.codebook.write_to(w)?;
        let m = self.codebook.m();
        for per_list in &self.slices {
            for slice in per_list {
                write_list(w, slice, m)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, SHARD_MAGIC)?;
        let node_id = read_u32(r)?;
        let num_nodes = read_u32(r)?;
        let channels = checked_len(read_u32(r)? as u64, 1 << 12, "channel")?;
        let nlist = checked_len(read_u32(r)? as u64, 1 << 24, "list")?;
        let dim = read_u32(r)? as usize;
        if channels == 0 || nlist == 0 || num_nodes == 0 || node_id >= num_nodes {
            return Err(Error::corruption("invalid shard header"));
        }
        let n = checked_len((nlist * dim) as u64, 1 << 30, "centroid value")?;
        let quantizer = CoarseQuantizer::from_centroids(dim, read_f32s(r, n)?)?;
        let codebook = PqCodebook::read_from(r)?;
        if codebook.dim() != dim {
            return Err(Error::corruption("shard codebook dimension mismatch"));
        }
        let m = codebook.m();
        let slices = (0..nlist)
            .map(|_| (0..channels).map(|_| read_list(r, m)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { node_id, num_nodes, quantizer, codebook, slices })
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
