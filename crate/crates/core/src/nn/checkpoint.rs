//! Binary checkpoint format.
//!
//! ```text
//! "GRNP" 0x01
//! u32 LE tensor count
//! per tensor: u16 LE name length, UTF-8 name, u8 rank, rank × u32 LE dims,
//!             prod(dims) × f32 LE values (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GRNP";
pub const VERSION: u8 = 1;

pub fn write_tensors<'a, W: Write, T: Scalar + 'a>(
    mut w: W,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::Checkpoint(format!("rank too large for {name}")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&(v.f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub fn read_tensors<R: Read, T: Scalar>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let magic: [u8; 4] = read_exact(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let [version] = read_exact::<_, 1>(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let [rank] = read_exact::<_, 1>(&mut r)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(T::c(f32::from_le_bytes(read_exact(&mut r)?) as f64));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let names: Vec<(&str, &Tensor<T>)> = store.iter().collect();
    write_tensors(BufWriter::new(file), names.into_iter())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<T>)>> {
    let file = File::open(path.as_ref()).map_err(|e| {
        Error::Checkpoint(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_tensors(BufReader::new(file))
}

/// Loads every tensor of the file that names a parameter of `store`.
/// Returns the number of tensors restored.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, path: impl AsRef<Path>) -> Result<usize> {
    let mut n = 0;
    for (name, t) in load::<T>(path)? {
        if let Some(id) = store.id(&name) {
            store.set(id, t)?;
            n += 1;
        }
    }
    Ok(n)
}
