//! Product quantization: codebook training, encoding, lookup tables and ADC.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::distance::{l2_sq, nearest_row};
use crate::error::{Error, Result};
use crate::io::{checked_len, expect_magic, read_f32s, read_u32, write_f32s, write_u32};
use crate::kmeans::{self, KMeansParams};

const CODEBOOK_MAGIC: &[u8; 4] = b"CPQ1";

/// Per-subspace centroid tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    dim: usize,
    m: usize,
    ksub: usize,
    dsub: usize,
    /// `m × ksub × dsub`, subspace-major.
    centroids: Vec<f32>,
}

/// One byte per subspace, each a centroid index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PqCode(pub Vec<u8>);

impl PqCode {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PqTrainParams {
    pub m: usize,
    pub ksub: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub max_train_points: Option<usize>,
}

impl PqTrainParams {
    pub fn new(m: usize, ksub: usize, seed: u64) -> Self {
        Self { m, ksub, kmeans_iters: 25, seed, max_train_points: None }
    }
}

/// Trains one k-means codebook per subspace. `vectors` is row-major `n × dim`.
pub fn train_pq(vectors: &[f32], dim: usize, params: &PqTrainParams) -> Result<PqCodebook> {
    let PqTrainParams { m, ksub, .. } = *params;
    check_shape(dim, m, ksub)?;
    if !vectors.len().is_multiple_of(dim) {
        return Err(Error::config("training data length is not a multiple of the dimension"));
    }
    let n = vectors.len() / dim;
    if n < ksub {
        return Err(Error::Training(format!("{n} training vectors for {ksub} centroids per subspace")));
    }
    let dsub = dim / m;
    let mut centroids = Vec::with_capacity(m * ksub * dsub);
    for sub in 0..m {
        let slice: Vec<f32> = vectors
            .chunks_exact(dim)
            .flat_map(|v| v[sub * dsub..(sub + 1) * dsub].iter().copied())
            .collect();
        let km = KMeansParams {
            k: ksub,
            max_iters: params.kmeans_iters,
            seed: params.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(sub as u64 + 1)),
            max_train_points: params.max_train_points,
        };
        centroids.extend(kmeans::train(&slice, dsub, &km)?.centroids);
    }
    PqCodebook::from_centroids(dim, m, ksub, centroids)
}

fn check_shape(dim: usize, m: usize, ksub: usize) -> Result<()> {
    if m == 0 || dim == 0 || !dim.is_multiple_of(m) {
        return Err(Error::config(format!("dimension {dim} is not divisible by m={m}")));
    }
    if ksub == 0 || ksub > 256 {
        return Err(Error::config(format!("centroids per subspace must be in 1..=256, got {ksub}")));
    }
    Ok(())
}

impl PqCodebook {
    pub fn from_centroids(dim: usize, m: usize, ksub: usize, centroids: Vec<f32>) -> Result<Self> {
        check_shape(dim, m, ksub)?;
        let dsub = dim / m;
        if centroids.len() != m * ksub * dsub {
            return Err(Error::config(format!(
                "expected {} centroid values, got {}",
                m * ksub * dsub,
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::corruption("codebook contains non-finite centroids"));
        }
        Ok(Self { dim, m, ksub, dsub, centroids })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ksub(&self) -> usize {
        self.ksub
    }

    pub fn dsub(&self) -> usize {
        self.dsub
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Centroid `j` of subspace `sub`.
    pub fn centroid(&self, sub: usize, j: usize) -> &[f32] {
        let off = (sub * self.ksub + j) * self.dsub;
        &self.centroids[off..off + self.dsub]
    }

    fn subspace(&self, sub: usize) -> &[f32] {
        let stride = self.ksub * self.dsub;
        &self.centroids[sub * stride..(sub + 1) * stride]
    }

    fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::config(format!(
                "vector has dimension {}, codebook expects {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn encode(&self, v: &[f32]) -> Result<PqCode> {
        let mut out = vec![0u8; self.m];
        self.encode_into(v, &mut out)?;
        Ok(PqCode(out))
    }

    /// Writes the code for `v` into `out` (length `m`).
    pub fn encode_into(&self, v: &[f32], out: &mut [u8]) -> Result<()> {
        self.check_dim(v)?;
        for (sub, byte) in out.iter_mut().enumerate().take(self.m) {
            let x = &v[sub * self.dsub..(sub + 1) * self.dsub];
            *byte = nearest_row(self.subspace(sub), self.dsub, x).0 as u8;
        }
        Ok(())
    }

    fn check_code(&self, code: &[u8]) -> Result<()> {
        if code.len() != self.m {
            return Err(Error::config(format!("code length {} != m={}", code.len(), self.m)));
        }
        if let Some(b) = code.iter().find(|&&b| b as usize >= self.ksub) {
            return Err(Error::corruption(format!("code byte {b} out of range for {} centroids", self.ksub)));
        }
        Ok(())
    }

    pub fn reconstruct(&self, code: &[u8]) -> Result<Vec<f32>> {
        self.check_code(code)?;
        let mut out = Vec::with_capacity(self.dim);
        for (sub, &b) in code.iter().enumerate() {
            out.extend_from_slice(self.centroid(sub, b as usize));
        }
        Ok(out)
    }

    /// Lookup table of squared partial distances from `residual` to every centroid.
    pub fn build_lut(&self, residual: &[f32]) -> Result<DistanceLut> {
        self.check_dim(residual)?;
        let mut table = Vec::with_capacity(self.m * self.ksub);
        for sub in 0..self.m {
            let x = &residual[sub * self.dsub..(sub + 1) * self.dsub];
            table.extend(self.subspace(sub).chunks_exact(self.dsub).map(|c| l2_sq(x, c)));
        }
        Ok(DistanceLut { m: self.m, ksub: self.ksub, table, query_id: 0, list_id: 0 })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CODEBOOK_MAGIC)?;
        write_u32(w, self.dim as u32)?;
        write_u32(w, self.m as u32)?;
        write_u32(w, self.ksub as u32)?;
        write_f32s(w, &self.centroids)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, CODEBOOK_MAGIC)?;
        let dim = read_u32(r)? as usize;
        let m = read_u32(r)? as usize;
        let ksub = read_u32(r)? as usize;
        check_shape(dim, m, ksub).map_err(|e| Error::corruption(e.to_string()))?;
        let n = checked_len((ksub * dim) as u64, 1 << 30, "centroid value")?;
        let centroids = read_f32s(r, n)?;
        Self::from_centroids(dim, m, ksub, centroids)
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

/// `m × ksub` table of partial squared distances for one (query, list) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceLut {
    m: usize,
    ksub: usize,
    table: Vec<f32>,
    pub query_id: u64,
    pub list_id: u32,
}

impl DistanceLut {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ksub(&self) -> usize {
        self.ksub
    }

    pub fn get(&self, sub: usize, j: usize) -> f32 {
        self.table[sub * self.ksub + j]
    }

    pub fn table(&self) -> &[f32] {
        &self.table
    }

    pub fn with_ids(mut self, query_id: u64, list_id: u32) -> Self {
        self.query_id = query_id;
        self.list_id = list_id;
        self
    }

    /// Asymmetric distance: sum of table entries addressed by the code bytes,
    /// accumulated in subspace order.
    pub fn adc_distance(&self, code: &[u8]) -> Result<f32> {
        if code.len() != self.m {
            return Err(Error::config(format!("code length {} != m={}", code.len(), self.m)));
        }
        let mut acc = 0f32;
        for (sub, &b) in code.iter().enumerate() {
            let j = b as usize;
            if j >= self.ksub {
                return Err(Error::corruption(format!("code byte {b} out of range for {} centroids", self.ksub)));
            }
            acc += self.table[sub * self.ksub + j];
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Centroids {(0,0),(1,1)} in both subspaces of a D=4, m=2, M=2 codebook.
    fn tiny() -> PqCodebook {
        PqCodebook::from_centroids(4, 2, 2, vec![0., 0., 1., 1., 0., 0., 1., 1.]).unwrap()
    }

    #[test]
    fn train_shape_matches_sift_layout() {
        let data: Vec<f32> = (0..300 * 128).map(|i| ((i * 7919) % 1013) as f32).collect();
        let cb = train_pq(&data, 128, &PqTrainParams { kmeans_iters: 2, ..PqTrainParams::new(16, 256, 1) }).unwrap();
        assert_eq!((cb.m(), cb.ksub(), cb.dsub()), (16, 256, 8));
        assert_eq!(cb.centroids().len(), 16 * 256 * 8);
    }

    #[test]
    fn train_tiny_recovers_subspace_points() {
        let data = [0., 0., 0., 0., 0., 0., 1., 1., 1., 1., 0., 0., 1., 1., 1., 1.];
        let cb = train_pq(&data, 4, &PqTrainParams::new(2, 2, 11)).unwrap();
        for sub in 0..2 {
            let mut cs: Vec<Vec<f32>> = (0..2).map(|j| cb.centroid(sub, j).to_vec()).collect();
            cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(cs, vec![vec![0., 0.], vec![1., 1.]]);
        }
        // zero quantization error
        for v in data.chunks(4) {
            let code = cb.encode(v).unwrap();
            assert_eq!(cb.reconstruct(&code.0).unwrap(), v);
        }
    }

    #[test]
    fn train_errors() {
        assert!(matches!(train_pq(&[0.0; 12], 3, &PqTrainParams::new(2, 2, 0)), Err(Error::Config(_))));
        assert!(matches!(train_pq(&[0.0; 8], 4, &PqTrainParams::new(2, 4, 0)), Err(Error::Training(_))));
        assert!(matches!(train_pq(&[0.0; 8], 4, &PqTrainParams::new(2, 300, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn encode_examples() {
        let cb = tiny();
        assert_eq!(cb.encode(&[0., 0., 1., 1.]).unwrap().0, vec![0, 1]);
        assert_eq!(cb.encode(&[1., 1., 1., 1.]).unwrap().0, vec![1, 1]);
        // equidistant from both centroids: lowest index wins
        assert_eq!(cb.encode(&[0.5, 0.5, 0.5, 0.5]).unwrap().0, vec![0, 0]);
        assert!(matches!(cb.encode(&[0.0; 3]), Err(Error::Config(_))));
    }

    #[test]
    fn single_centroid_encodes_to_zero() {
        let cb = PqCodebook::from_centroids(4, 2, 1, vec![3., 3., -1., 2.]).unwrap();
        assert_eq!(cb.encode(&[9., -4., 0., 100.]).unwrap().0, vec![0, 0]);
    }

    #[test]
    fn lut_and_adc_examples() {
        let cb = tiny();
        let lut = cb.build_lut(&[0., 0., 1., 1.]).unwrap();
        assert_eq!(lut.table(), &[0., 2., 2., 0.]);
        assert_eq!(lut.adc_distance(&[0, 1]).unwrap(), 0.0);
        assert_eq!(lut.adc_distance(&[1, 0]).unwrap(), 4.0);
        assert!(matches!(lut.adc_distance(&[2, 0]), Err(Error::Corruption(_))));
    }

    #[test]
    fn zero_lut() {
        let cb = PqCodebook::from_centroids(4, 2, 3, vec![0.0; 12]).unwrap();
        assert!(cb.build_lut(&[0.0; 4]).unwrap().table().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lut_matches_direct_loop_bitwise() {
        let vals: Vec<f32> = (0..4 * 16 * 6).map(|i| ((i * 37) % 101) as f32 / 7.0).collect();
        let cb = PqCodebook::from_centroids(24, 4, 16, vals).unwrap();
        let q: Vec<f32> = (0..24).map(|i| i as f32 * 0.3 - 2.0).collect();
        let lut = cb.build_lut(&q).unwrap();
        for sub in 0..4 {
            for j in 0..16 {
                let direct = l2_sq(&q[sub * 6..sub * 6 + 6], cb.centroid(sub, j));
                assert_eq!(lut.get(sub, j).to_bits(), direct.to_bits());
            }
        }
    }

    #[test]
    fn reconstruct_examples() {
        let cb = tiny();
        assert_eq!(cb.reconstruct(&[0, 1]).unwrap(), vec![0., 0., 1., 1.]);
        assert_eq!(cb.reconstruct(&[1, 1]).unwrap(), vec![1., 1., 1., 1.]);
        assert!(matches!(cb.reconstruct(&[0, 5]), Err(Error::Corruption(_))));
    }

    #[test]
    fn codebook_file_round_trip() {
        let cb = tiny();
        let mut buf = Vec::new();
        cb.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CPQ1");
        assert_eq!(buf.len(), 4 + 12 + 8 * 4);
        assert_eq!(PqCodebook::read_from(&mut buf.as_slice()).unwrap(), cb);
        buf[0] = b'X';
        assert!(matches!(PqCodebook::read_from(&mut buf.as_slice()), Err(Error::Corruption(_))));
    }
}
