//! SQT1 container: the magic `SQT1`, a little-endian `u32` rank, `rank`
//! little-endian `u32` extents, then the row-major values as little-endian
//! `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const SQT_MAGIC: &[u8; 4] = b"SQT1";

pub fn write_sqt_to(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    w.write_all(SQT_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads one tensor. `Ok(None)` on a clean end of stream.
pub fn read_sqt_from(r: &mut impl Read) -> std::result::Result<Option<Tensor>, String> {
    let mut magic = [0u8; 4];
    match r.read(&mut magic[..1]) {
        Ok(0) => return Ok(None),
        Ok(_) => {}
        Err(e) => return Err(e.to_string()),
    }
    r.read_exact(&mut magic[1..]).map_err(|e| e.to_string())?;
    if &magic != SQT_MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let mut word = [0u8; 4];
    let mut next_u32 = |r: &mut dyn Read| -> std::result::Result<u32, String> {
        r.read_exact(&mut word).map_err(|e| e.to_string())?;
        Ok(u32::from_le_bytes(word))
    };
    let rank = next_u32(r)? as usize;
    if rank > 16 {
        return Err(format!("implausible rank {rank}"));
    }
    let shape = (0..rank)
        .map(|_| next_u32(r).map(|d| d as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(|e| format!("truncated payload: {e}"))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Tensor::new(&shape, data).map(Some).map_err(|e| e.to_string())
}

pub fn write_sqt(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_sqt_to(&mut w, t)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_sqt(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let t = read_sqt_from(&mut r)
        .map_err(fmt)?
        .ok_or_else(|| fmt("empty file".into()))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(fmt("trailing bytes after tensor".into()));
    }
    Ok(t)
}
