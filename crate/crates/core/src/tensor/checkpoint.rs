//! Little-endian binary checkpoint of named tensors.
//!
//! ```text
//! magic    [u8; 4]   "VRCK"
//! version  u32
//! count    u32
//! count x {
//!     name_len u32, name [u8; name_len] (UTF-8)
//!     rank     u32, dims [u64; rank]
//!     data     [f64; product(dims)]
//! }
//! ```
//!
//! Values are always stored as `f64` regardless of the in-memory scalar.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::io("<checkpoint stream>", e)
}

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32).map_err(io_err)?;
    for (name, t) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_u32::<LittleEndian>(t.rank() as u32).map_err(io_err)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64).map_err(io_err)?;
        }
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v.as_f64()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>().map_err(io_err)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(T::lit(r.read_f64::<LittleEndian>().map_err(io_err)?));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
