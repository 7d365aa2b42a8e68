//! Checkpoint container: named parameter tensors in a small versioned file.
//!
//! Layout, all integers little-endian u32, all floats raw little-endian f32:
//!
//! ```text
//! "PIDNET1"                          7-byte magic, last byte is the version
//! count                              number of parameter entries
//! repeated count times:
//!   name_len, name bytes (UTF-8)
//!   ndim, dim[0..ndim]
//!   data: prod(dims) f32 values
//! ```
//!
//! Values are stored as f32 regardless of the in-memory scalar width.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Magic prefix; the trailing `1` is the format version.
pub const CHECKPOINT_MAGIC: &[u8; 7] = b"PIDNET1";

/// Upper bounds used to reject corrupted headers early.
const MAX_NAME_LEN: u32 = 4096;
const MAX_NDIM: u32 = 8;
const MAX_NUMEL: u64 = 1 << 31;

/// Writes named tensors to `path` in checkpoint format.
pub fn save_checkpoint<T: Scalar>(path: &Path, entries: &[(&str, &Tensor<T>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.shape.len() as u32).to_le_bytes())?;
        for &d in &tensor.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_f32().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::Data(format!(
                "checkpoint truncated at byte offset {}",
                self.offset
            ))),
            Err(e) => Err(e.into()),
        }
    }

    fn read_u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }
}

/// Reads a checkpoint back as `(name, tensor)` pairs in file order.
///
/// Rejects files without the magic prefix, files with an unknown version
/// byte, and truncated or implausible contents (reported with the byte
/// offset where reading failed).
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { inner: BufReader::new(File::open(path)?), offset: 0 };
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic[..6] != &CHECKPOINT_MAGIC[..6] {
        return Err(Error::Data("not a checkpoint file (bad magic)".into()));
    }
    if magic[6] != CHECKPOINT_MAGIC[6] {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {:?} (expected {:?})",
            magic[6] as char, CHECKPOINT_MAGIC[6] as char
        )));
    }
    let count = r.read_u32()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.read_u32()?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::Data(format!(
                "implausible name length {} at byte offset {}",
                name_len,
                r.offset - 4
            )));
        }
        let mut name_buf = vec![0u8; name_len as usize];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Data(format!("non-UTF-8 name at byte offset {}", r.offset)))?;
        let ndim = r.read_u32()?;
        if ndim > MAX_NDIM {
            return Err(Error::Data(format!(
                "implausible rank {} at byte offset {}",
                ndim,
                r.offset - 4
            )));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let d = r.read_u32()?;
            numel = numel.saturating_mul(d as u64);
            shape.push(d as usize);
        }
        if numel > MAX_NUMEL {
            return Err(Error::Data(format!(
                "implausible element count {} at byte offset {}",
                numel, r.offset
            )));
        }
        let mut data = Vec::with_capacity(numel as usize);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(T::from_f64(f32::from_le_bytes(buf) as f64));
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}
