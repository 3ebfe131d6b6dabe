//! Binary tensor encoding.
//!
//! Layout: `b"PADT"`, version `1u8`, dtype code `u8`, rank `u8`, a zero pad
//! byte, `rank` little-endian `u64` dims, then the elements row-major in
//! little-endian order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const BLOB_MAGIC: &[u8; 4] = b"PADT";
pub const BLOB_VERSION: u8 = 1;
const FIXED: usize = 8;

pub fn encode_blob<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED + 8 * t.rank() + T::DTYPE.size() * t.numel());
    write_blob(t, &mut out);
    out
}

/// Appends the encoding of `t` to `out`.
pub fn write_blob<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(BLOB_MAGIC);
    out.push(BLOB_VERSION);
    out.push(T::DTYPE.code());
    out.push(u8::try_from(t.rank()).expect("rank fits in a byte"));
    out.push(0);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Header fields of a blob at the start of `bytes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlobHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Total encoded size including the header.
    pub len: usize,
}

pub fn read_blob_header(bytes: &[u8]) -> Result<BlobHeader> {
    let short = || Error::Corruption(format!("tensor blob truncated at {} bytes", bytes.len()));
    if bytes.len() < FIXED {
        return Err(short());
    }
    if &bytes[..4] != BLOB_MAGIC {
        return Err(Error::Corruption("bad tensor blob magic".into()));
    }
    if bytes[4] != BLOB_VERSION {
        return Err(Error::UnsupportedVersion {
            found: bytes[4],
            expected: BLOB_VERSION,
        });
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| Error::Corruption(format!("unknown dtype code {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    if bytes[7] != 0 {
        return Err(Error::Corruption("nonzero tensor blob pad byte".into()));
    }
    let dims_end = FIXED + 8 * rank;
    if bytes.len() < dims_end {
        return Err(short());
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for chunk in bytes[FIXED..dims_end].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        let d = usize::try_from(d).map_err(|_| Error::Corruption("dimension overflows".into()))?;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::Corruption("element count overflows".into()))?;
        shape.push(d);
    }
    let len = numel
        .checked_mul(dtype.size())
        .and_then(|n| n.checked_add(dims_end))
        .ok_or_else(|| Error::Corruption("blob size overflows".into()))?;
    Ok(BlobHeader { dtype, shape, len })
}

/// Decodes one blob from the start of `bytes`, returning the tensor and the
/// number of bytes consumed.
pub fn decode_blob<T: Scalar>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let h = read_blob_header(bytes)?;
    if h.dtype != T::DTYPE {
        return Err(Error::InvalidArgument(format!(
            "blob holds {:?}, requested {:?}",
            h.dtype,
            T::DTYPE
        )));
    }
    if bytes.len() < h.len {
        return Err(Error::Corruption(format!(
            "tensor blob needs {} bytes, found {}",
            h.len,
            bytes.len()
        )));
    }
    let start = FIXED + 8 * h.shape.len();
    let data: Vec<T> = bytes[start..h.len]
        .chunks_exact(T::DTYPE.size())
        .map(T::read_le)
        .collect();
    let t = Tensor::from_vec(data, &h.shape).map_err(|e| Error::Corruption(e.to_string()))?;
    Ok((t, h.len))
}

pub fn save_tensor<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_blob(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = decode_blob(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after tensor",
            bytes.len() - used
        )));
    }
    Ok(t)
}
