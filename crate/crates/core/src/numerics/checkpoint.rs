//! Flat binary parameter container.
//!
//! Layout (little endian): the 8-byte magic `LOCOPRM\0`, a `u32` format
//! version, a `u32` entry count, then per entry: `u32` name length, UTF-8
//! name, `u32` rank, `rank × u64` extents, and the row-major `f64` values.

use std::io::{Read, Write};

use super::{NumericsError, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"LOCOPRM\0";
pub const VERSION: u32 = 1;

pub fn write_params(params: &ParamStore, mut w: impl Write) -> Result<(), NumericsError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn to_bytes(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    write_params(params, &mut out).expect("writing to a Vec cannot fail");
    out
}

fn read_u32(r: &mut impl Read) -> Result<u32, NumericsError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params(mut r: impl Read) -> Result<ParamStore, NumericsError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic header".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let count = read_u32(&mut r)?;
    let mut ps = ParamStore::new();
    for _ in 0..count {
        let n = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NumericsError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        if ps.id_of(&name).is_some() {
            return Err(NumericsError::Checkpoint(format!("duplicate entry {name:?}")));
        }
        ps.add(name, Tensor::new(shape, data)?);
    }
    Ok(ps)
}
