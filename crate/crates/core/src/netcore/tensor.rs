//! Dense float tensors and the `HTF1` container file format.
//!
//! `HTF1` is a tiny bit-exact interchange format: magic `HTF1`, one dtype
//! byte (1 = f32), one rank byte, two reserved bytes, `rank` little-endian
//! u32 dims, then the row-major little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

const HTF1_MAGIC: [u8; 4] = *b"HTF1";
const DTYPE_F32: u8 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("tensor contains a non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("bad magic bytes {0:?}, not an HTF1 file")]
    BadMagic([u8; 4]),
    #[error("unsupported dtype code {0}")]
    BadDtype(u8),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major f32 tensor. All values are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret the same buffer under a new shape of equal length.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                got: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<(), TensorError> {
        if self.shape != shape {
            return Err(TensorError::ShapeMismatch {
                expected: shape.to_vec(),
                got: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Serialize to HTF1 bytes.
    pub fn to_htf1(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.shape.len() * 4 + self.data.len() * 4);
        out.extend_from_slice(&HTF1_MAGIC);
        out.push(DTYPE_F32);
        out.push(self.shape.len() as u8);
        out.extend_from_slice(&[0, 0]);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse HTF1 bytes. Rejects wrong magic, unknown dtypes, truncated
    /// payloads and non-finite values.
    pub fn from_htf1(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != HTF1_MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        let mut head = [0u8; 4];
        r.read_exact(&mut head)?;
        if head[0] != DTYPE_F32 {
            return Err(TensorError::BadDtype(head[0]));
        }
        let rank = head[1] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut dim = [0u8; 4];
            r.read_exact(&mut dim)?;
            shape.push(u32::from_le_bytes(dim) as usize);
        }
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_htf1())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let bytes = std::fs::read(path)?;
        Self::from_htf1(&bytes)
    }
}
