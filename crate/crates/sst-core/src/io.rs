//! Binary tensor file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "SSTT"
//! version u32      currently 1
//! dtype   u32      0 = f32, 1 = f64
//! ndim    u32      1..=4
//! dims    u32 * ndim
//! payload row-major scalars, little-endian
//! ```
//!
//! `write_tensor(read_tensor(bytes)) == bytes` holds bit-exactly for both
//! dtypes: values are widened to `f64` in memory and the original dtype is
//! kept on the loaded tensor so the writer can narrow them back.

use crate::error::{Error, Result};
use crate::tensor::{Dims3, Matrix, VideoFeatureTensor};

pub const MAGIC: [u8; 4] = *b"SSTT";
pub const VERSION: u32 = 1;

/// On-disk scalar type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::UnknownDtype(other)),
        }
    }
}

/// A tensor as decoded from a file: raw dims, payload widened to `f64`, and
/// the dtype it was stored with.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn new(dims: Vec<usize>, dtype: Dtype, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::InvalidDims(format!(
                "ndim {} not in 1..=4",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidDims("zero-length axis".into()));
        }
        let count: usize = dims.iter().product();
        if data.len() != count {
            return Err(Error::ShapeMismatch(format!(
                "payload has {} scalars, dims imply {}",
                data.len(),
                count
            )));
        }
        Ok(StoredTensor { dims, dtype, data })
    }

    pub fn from_video(t: &VideoFeatureTensor, dtype: Dtype) -> Self {
        let d = t.dims();
        StoredTensor {
            dims: vec![t.channels(), d.frames, d.height, d.width],
            dtype,
            data: t.data().to_vec(),
        }
    }

    pub fn from_matrix(m: &Matrix, dtype: Dtype) -> Self {
        StoredTensor {
            dims: vec![m.rows(), m.cols()],
            dtype,
            data: m.data().to_vec(),
        }
    }

    pub fn into_video(self) -> Result<VideoFeatureTensor> {
        if self.dims.len() != 4 {
            return Err(Error::InvalidDims(format!(
                "expected 4 axes for a video tensor, found {}",
                self.dims.len()
            )));
        }
        VideoFeatureTensor::from_data(
            self.dims[0],
            Dims3::new(self.dims[1], self.dims[2], self.dims[3]),
            self.data,
        )
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        if self.dims.len() != 2 {
            return Err(Error::InvalidDims(format!(
                "expected 2 axes for a matrix, found {}",
                self.dims.len()
            )));
        }
        Matrix::from_data(self.dims[0], self.dims[1], self.data)
    }
}

/// Decodes a tensor file. Fails with a distinct error for a bad magic,
/// unsupported version, unknown dtype, short payload, or trailing bytes.
pub fn read_tensor(bytes: &[u8]) -> Result<StoredTensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(cur.u32()?)?;
    let ndim = cur.u32()? as usize;
    if ndim == 0 || ndim > 4 {
        return Err(Error::InvalidDims(format!("ndim {ndim} not in 1..=4")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = cur.u32()? as usize;
        if d == 0 {
            return Err(Error::InvalidDims("zero-length axis".into()));
        }
        dims.push(d);
    }
    let count: usize = dims.iter().product();
    let payload = cur.take(count * dtype.size())?;
    if cur.pos != bytes.len() {
        return Err(Error::TrailingBytes);
    }
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(StoredTensor { dims, dtype, data })
}

/// Encodes a tensor; exact inverse of [`read_tensor`].
pub fn write_tensor(t: &StoredTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.dims.len() + t.data.len() * t.dtype.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dtype as u32).to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t.dtype {
        Dtype::F32 => {
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedPayload);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}
