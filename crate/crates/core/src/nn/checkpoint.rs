//! Binary checkpoint format.
//!
//! Layout (little-endian): `b"FIMA"`, `u16` format version, `u64` spec
//! fingerprint, `u64` parameter count, then `count` IEEE-754 `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::spec::ParamVector;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FIMA";
pub const FORMAT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamVector) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&params.spec_fingerprint.to_le_bytes())?;
    w.write_all(&(params.values.len() as u64).to_le_bytes())?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamVector> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf)?;
    let version = u16::from_le_bytes(u16buf);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let fingerprint = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut values = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        r.read_exact(&mut u64buf)?;
        values.push(f64::from_le_bytes(u64buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Ok(ParamVector::new(values, fingerprint))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamVector) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamVector> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
