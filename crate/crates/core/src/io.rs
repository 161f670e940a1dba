//! Bit-exact tensor file format.
//!
//! Layout: magic bytes `"TKT1"`; u8 dtype tag (1 = f64, 2 = f32); u8 rank
//! (always 4); six reserved zero bytes; four u64 little-endian dims
//! (n, c, h, w); payload of little-endian scalars in row-major N, C, H, W
//! order. Write-then-read round-trips bitwise for both dtypes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const MAGIC: &[u8; 4] = b"TKT1";
const HEADER_LEN: usize = 4 + 1 + 1 + 6 + 4 * 8;

pub fn tensor_to_bytes<S: Scalar>(t: &Tensor4<S>) -> Vec<u8> {
    let (n, c, h, w) = t.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + t.len() * S::BYTES);
    out.extend_from_slice(MAGIC);
    out.push(S::DTYPE_TAG);
    out.push(4u8);
    out.extend_from_slice(&[0u8; 6]);
    for dim in [n, c, h, w] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn tensor_from_bytes<S: Scalar>(bytes: &[u8]) -> Result<Tensor4<S>> {
    if bytes.len() < 6 {
        return Err(Error::Truncated(format!(
            "{} bytes is too short for the header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let tag = bytes[4];
    if tag != S::DTYPE_TAG {
        return Err(Error::DtypeMismatch {
            found: tag,
            expected: S::DTYPE_TAG,
            name: S::DTYPE_NAME,
        });
    }
    let rank = bytes[5];
    if rank != 4 {
        return Err(Error::BadRank(rank));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!(
            "{} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    let mut dims = [0usize; 4];
    for (i, dim) in dims.iter_mut().enumerate() {
        let off = 12 + i * 8;
        let v = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        *dim = usize::try_from(v)
            .map_err(|_| Error::DimsOverflow(format!("dim {i} = {v} exceeds usize")))?;
    }
    let [n, c, h, w] = dims;
    let count = n
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::DimsOverflow(format!("{n}x{c}x{h}x{w} overflows")))?;
    let payload_len = count
        .checked_mul(S::BYTES)
        .ok_or_else(|| Error::DimsOverflow(format!("payload for {count} scalars overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != payload_len {
        return Err(Error::Truncated(format!(
            "payload is {} bytes, dims {n}x{c}x{h}x{w} need {payload_len}",
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(S::BYTES) {
        data.push(S::read_le(chunk));
    }
    Tensor4::from_vec(n, c, h, w, data)
}

pub fn write_tensor<S: Scalar>(path: impl AsRef<Path>, t: &Tensor4<S>) -> Result<()> {
    fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

pub fn read_tensor<S: Scalar>(path: impl AsRef<Path>) -> Result<Tensor4<S>> {
    let bytes = fs::read(path)?;
    tensor_from_bytes(&bytes)
}
