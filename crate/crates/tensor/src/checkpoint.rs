//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `STMC`, `u32` format version, `u32` entry
//! count, then per entry a `u32`-length-prefixed UTF-8 parameter path, `u32`
//! rank, `u32` extents, and the row-major `f32` values.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::array::NdArray;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"STMC";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint entry name is not UTF-8")]
    BadName,
    #[error("checkpoint entry {0} has an invalid shape")]
    BadShape(String),
    #[error("checkpoint is missing parameter {0}")]
    Missing(String),
    #[error("checkpoint has unknown parameter {0}")]
    Unexpected(String),
    #[error("parameter {name}: model expects shape {expected:?}, checkpoint has {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_entries<W: Write>(mut w: W, entries: &[(String, NdArray<f32>)]) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, value) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.ndim() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(value.len() * 4);
        for v in value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_entries<R: Read>(mut r: R) -> Result<Vec<(String, NdArray<f32>)>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(CheckpointError::BadShape(name));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let value = NdArray::new(shape, data).map_err(|_| CheckpointError::BadShape(name.clone()))?;
        out.push((name, value));
    }
    Ok(out)
}

pub fn save<W: Write>(store: &ParamStore<f32>, w: W) -> Result<(), CheckpointError> {
    let entries: Vec<_> = store.names().iter().cloned().zip(store.values().iter().cloned()).collect();
    write_entries(w, &entries)
}

/// Load every parameter of `store` from a checkpoint; any missing, extra or
/// differently shaped entry is an error and leaves `store` untouched.
pub fn load<R: Read>(store: &mut ParamStore<f32>, r: R) -> Result<(), CheckpointError> {
    let entries = read_entries(r)?;
    let mut staged = Vec::with_capacity(entries.len());
    for (name, value) in entries {
        let id = store.id(&name).ok_or_else(|| CheckpointError::Unexpected(name.clone()))?;
        let expected = store.get(id).shape().to_vec();
        if value.shape() != expected.as_slice() {
            return Err(CheckpointError::ShapeMismatch { name, expected, found: value.shape().to_vec() });
        }
        staged.push((id, value));
    }
    if staged.len() != store.len() {
        let seen: std::collections::HashSet<_> = staged.iter().map(|(id, _)| id.0).collect();
        let missing = (0..store.len()).find(|i| !seen.contains(i)).unwrap_or(0);
        return Err(CheckpointError::Missing(store.names()[missing].clone()));
    }
    for (id, value) in staged {
        store.set(id, value).expect("shape checked");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", NdArray::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, -0.25]).unwrap());
        s.add("a.bias", NdArray::new(vec![2], vec![0.5, 0.25]).unwrap());
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let mut buf = Vec::new();
        save(&s, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"STMC");
        let mut t = store();
        t.values_mut().iter_mut().for_each(|v| v.data_mut().iter_mut().for_each(|x| *x = 9.0));
        load(&mut t, buf.as_slice()).unwrap();
        assert_eq!(s.values(), t.values());
    }

    #[test]
    fn shape_mismatch_fails_loudly() {
        let mut buf = Vec::new();
        save(&store(), &mut buf).unwrap();
        let mut other = ParamStore::new();
        other.add("a.weight", NdArray::<f32>::zeros(&[3, 2]));
        other.add("a.bias", NdArray::<f32>::zeros(&[2]));
        let err = load(&mut other, buf.as_slice()).unwrap_err();
        assert!(matches!(err, CheckpointError::ShapeMismatch { .. }), "{err}");
        assert!(other.values()[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn missing_and_truncated_are_errors() {
        let mut buf = Vec::new();
        save(&store(), &mut buf).unwrap();
        let mut bigger = store();
        bigger.add("b.weight", NdArray::zeros(&[1]));
        assert!(matches!(load(&mut bigger, buf.as_slice()), Err(CheckpointError::Missing(n)) if n == "b.weight"));
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(load(&mut store(), cut), Err(CheckpointError::Io(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load(&mut store(), bad.as_slice()), Err(CheckpointError::BadMagic)));
    }
}
