use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::io::{read_u32, write_u32, write_u64};

const PAYLOAD_MAGIC: &[u8; 4] = b"CPAY";

/// Append-only writer for a payload log: `CPAY`, then `(u64 id, u32 len, bytes)*`.
pub struct PayloadWriter {
    out: BufWriter<File>,
}

impl PayloadWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(PAYLOAD_MAGIC)?;
        Ok(Self { out })
    }

    /// Opens an existing log for appending.
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = OpenOptions::new().read(true).append(true).open(path)?;
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != PAYLOAD_MAGIC {
            return Err(Error::corruption("not a payload store"));
        }
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn put(&mut self, id: u64, payload: &[u8]) -> Result<()> {
        let len = u32::try_from(payload.len()).map_err(|_| Error::Input("payload larger than 4 GiB".into()))?;
        write_u64(&mut self.out, id)?;
        write_u32(&mut self.out, len)?;
        self.out.write_all(payload)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Read side of the payload log with an in-memory `id → (offset, len)` map.
/// Later records for the same id shadow earlier ones.
pub struct PayloadStore {
    file: Mutex<File>,
    offsets: HashMap<u64, (u64, u32)>,
}

impl PayloadStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let total = file.metadata()?.len();
        let mut r = BufReader::new(file.try_clone()?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PAYLOAD_MAGIC {
            return Err(Error::corruption("not a payload store"));
        }
        let mut offsets = HashMap::new();
        let mut pos = 4u64;
        while pos < total {
            if total - pos < 12 {
                return Err(Error::corruption("truncated payload record header"));
            }
            let mut id = [0u8; 8];
            r.read_exact(&mut id)?;
            let len = read_u32(&mut r)?;
            pos += 12;
            if total - pos < len as u64 {
                return Err(Error::corruption("truncated payload record"));
            }
            offsets.insert(u64::from_le_bytes(id), (pos, len));
            r.seek_relative(len as i64)?;
            pos += len as u64;
        }
        Ok(Self { file: Mutex::new(file), offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.offsets.contains_key(&id)
    }

    pub fn get(&self, id: u64) -> Result<Vec<u8>> {
        let &(off, len) = self
            .offsets
            .get(&id)
            .ok_or_else(|| Error::corruption(format!("no payload stored for vector id {id}")))?;
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.seek(SeekFrom::Start(off))?;
        let mut buf = vec![0u8; len as usize];
        f.read_exact(&mut buf)?;
        Ok(buf)
    }
}
