//! Synthetic vector datasets and the `CVEC` file format
//! (`CVEC`, `u32 D`, then a raw little-endian f32 stream).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{expect_magic, read_u32, write_f32s, write_u32};

const VEC_MAGIC: &[u8; 4] = b"CVEC";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Distribution {
    /// Independent U[0, 1) coordinates.
    Uniform,
    /// Independent N(0, 1) coordinates.
    Gaussian,
    /// Gaussian blobs: centers ~ N(0, 1), points ~ center + N(0, spread²).
    Clustered { clusters: usize, spread: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub dim: usize,
    pub distribution: Distribution,
    pub seed: u64,
}

/// Row-major vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<Dataset> {
        if self.dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let total = self.n * self.dim;
        let data = match self.distribution {
            Distribution::Uniform => (0..total).map(|_| rng.gen::<f32>()).collect(),
            Distribution::Gaussian => (0..total).map(|_| StandardNormal.sample(&mut rng)).collect(),
            Distribution::Clustered { clusters, spread } => {
                if clusters == 0 {
                    return Err(Error::config("clustered distribution needs at least one cluster"));
                }
                let centers: Vec<f32> = (0..clusters * self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut data = Vec::with_capacity(total);
                for _ in 0..self.n {
                    let c = rng.gen_range(0..clusters);
                    let center = &centers[c * self.dim..(c + 1) * self.dim];
                    data.extend(center.iter().map(|&x| {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        x + spread * z
                    }));
                }
                data
            }
        };
        Ok(Dataset { dim: self.dim, data })
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(VEC_MAGIC)?;
        write_u32(w, self.dim as u32)?;
        write_f32s(w, &self.data)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, VEC_MAGIC)?;
        let dim = read_u32(r)? as usize;
        if dim == 0 {
            return Err(Error::corruption("vector file has zero dimension"));
        }
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() % (4 * dim) != 0 {
            return Err(Error::corruption("vector file body is not a whole number of vectors"));
        }
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { dim, data })
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
