//! EGT1 binary tensor files: `b"EGT1"`, `u32` rank, `rank` x `u32` extents,
//! then the f64 payload, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const EGT_MAGIC: &[u8; 4] = b"EGT1";

pub fn write_egt_to<W: Write>(t: &Tensor, mut w: W) -> std::io::Result<()> {
    w.write_all(EGT_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn write_egt(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_egt_to(t, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

/// Reads one tensor from `r`; `what` names the source in errors.
pub fn read_egt_from<R: Read>(mut r: R, what: &str) -> Result<Tensor> {
    let mut offset = 0u64;
    let mut take = |buf: &mut [u8], field: &str| -> Result<()> {
        r.read_exact(buf)
            .map_err(|_| Error::format(what, offset, format!("truncated while reading {field}")))?;
        offset += buf.len() as u64;
        Ok(())
    };
    let mut magic = [0u8; 4];
    take(&mut magic, "magic")?;
    if &magic != EGT_MAGIC {
        return Err(Error::format(what, 0, format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    take(&mut word, "rank")?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::format(what, 4, format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        take(&mut word, "extent")?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let n: usize = shape.iter().product();
    if n == 0 {
        return Err(Error::format(what, 8, format!("zero extent in {shape:?}")));
    }
    let mut data = Vec::with_capacity(n);
    let mut dw = [0u8; 8];
    for _ in 0..n {
        take(&mut dw, "payload")?;
        data.push(f64::from_le_bytes(dw));
    }
    Tensor::new(shape, data)
}

pub fn read_egt(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_egt_from(BufReader::new(f), &path.display().to_string())
}
