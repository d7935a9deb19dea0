//! The binary `TPRM` tensor file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes            | content                                      |
//! |------------------|----------------------------------------------|
//! | 4                | magic `54 50 52 4D` (`"TPRM"`)               |
//! | 1                | version, currently `1`                       |
//! | 1                | order `D`                                    |
//! | `8 * D`          | dims as `u64`                                |
//! | `8 * prod(dims)` | entries as IEEE-754 `f64`, last index fastest |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{format_err, Result};
use crate::tensor::DenseTensor;

pub const MAGIC: [u8; 4] = *b"TPRM";
pub const VERSION: u8 = 1;

pub fn write_tensor<W: Write>(mut w: W, tensor: &DenseTensor) -> Result<()> {
    let order = u8::try_from(tensor.order())
        .map_err(|_| format_err!("order {} does not fit in one byte", tensor.order()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, order])?;
    for &d in tensor.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<DenseTensor> {
    let mut header = [0u8; 6];
    r.read_exact(&mut header)
        .map_err(|e| format_err!("truncated header: {e}"))?;
    if header[..4] != MAGIC {
        return Err(format_err!("bad magic bytes {:02X?}", &header[..4]));
    }
    if header[4] != VERSION {
        return Err(format_err!("unsupported version {}", header[4]));
    }
    let order = header[5] as usize;
    let mut dims = Vec::with_capacity(order);
    let mut buf = [0u8; 8];
    for _ in 0..order {
        r.read_exact(&mut buf)
            .map_err(|e| format_err!("truncated dims: {e}"))?;
        let d = u64::from_le_bytes(buf);
        dims.push(usize::try_from(d).map_err(|_| format_err!("dimension {d} too large"))?);
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err!("dims {dims:?} overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(format_err!(
            "payload has {} bytes, dims {:?} require {}",
            bytes.len(),
            dims,
            len * 8
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::new(dims, data).map_err(|e| format_err!("invalid tensor payload: {e}"))
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &DenseTensor) -> Result<()> {
    write_tensor(BufWriter::new(File::create(path)?), tensor)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor(BufReader::new(File::open(path)?))
}
