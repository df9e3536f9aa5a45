//! Minimal binary tensor container: a magic tag, the rank, the dimensions
//! as little-endian `u64`, then row-major little-endian `f32` values.
//!
//! Used for posterior dumps, cached enhanced audio and imported segment
//! embeddings (shape `(devices, slots, dim)`, NaN rows for missing segments).

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::diarize::PrecomputedEmbeddings;

pub const MAGIC: &[u8; 4] = b"DMT1";
const MAX_RANK: usize = 8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor file (bad magic)")]
    Magic,
    #[error("unsupported rank {0}")]
    Rank(usize),
    #[error("shape {shape:?} needs {expected} values, found {found}")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("expected a rank-{expected} tensor, found shape {shape:?}")]
    Shape { expected: usize, shape: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.len() > MAX_RANK {
            return Err(TensorError::Rank(shape.len()));
        }
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::Length {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Result<Self, TensorError> {
        Self::new(shape, data.into_iter().map(|v| v as f32).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        Self::read_from(&mut &bytes[..])
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, TensorError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Magic);
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank > MAX_RANK {
            return Err(TensorError::Rank(rank));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut d = [0u8; 8];
            r.read_exact(&mut d)?;
            shape.push(u64::from_le_bytes(d) as usize);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        let expected = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let found = rest.len() / 4;
        match expected {
            Some(n) if n == found && rest.len() % 4 == 0 => {}
            _ => {
                return Err(TensorError::Length {
                    expected: expected.unwrap_or(usize::MAX),
                    shape,
                    found,
                })
            }
        }
        let data = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    fn expect_rank(&self, rank: usize) -> Result<(), TensorError> {
        if self.shape.len() != rank {
            return Err(TensorError::Shape {
                expected: rank,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Interprets a `(devices, slots, dim)` tensor as segment embeddings; a
    /// row containing any non-finite value is treated as missing.
    pub fn to_embeddings(&self) -> Result<PrecomputedEmbeddings, TensorError> {
        self.expect_rank(3)?;
        let (m, t, d) = (self.shape[0], self.shape[1], self.shape[2]);
        let values = (0..m)
            .map(|i| {
                (0..t)
                    .map(|j| {
                        let row = &self.data[(i * t + j) * d..(i * t + j + 1) * d];
                        row.iter()
                            .all(|v| v.is_finite())
                            .then(|| row.iter().map(|&v| f64::from(v)).collect())
                    })
                    .collect()
            })
            .collect();
        Ok(PrecomputedEmbeddings { dim: d, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bytes() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, f32::MAX, -0.0]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(bytes.len(), 4 + 4 + 16 + 24);
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn scalar_and_empty() {
        let s = Tensor::new(vec![], vec![7.0]).unwrap();
        assert_eq!(Tensor::from_bytes(&s.to_bytes()).unwrap(), s);
        let e = Tensor::new(vec![0, 5], vec![]).unwrap();
        assert_eq!(Tensor::from_bytes(&e.to_bytes()).unwrap(), e);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(Tensor::new(vec![2, 2], vec![0.0; 3]), Err(TensorError::Length { .. })));
        assert!(matches!(Tensor::from_bytes(b"NOPE\0\0\0\0"), Err(TensorError::Magic)));
        let mut bytes = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        bytes.pop();
        assert!(matches!(Tensor::from_bytes(&bytes), Err(TensorError::Length { .. })));
        assert!(matches!(Tensor::from_bytes(b"DMT1"), Err(TensorError::Io(_))));
    }

    #[test]
    fn embeddings_mark_missing_rows() {
        let mut data = vec![0.5f32; 2 * 3 * 2];
        data[2] = f32::NAN; // device 0, slot 1
        let t = Tensor::new(vec![2, 3, 2], data).unwrap();
        let e = t.to_embeddings().unwrap();
        assert_eq!(e.dim, 2);
        assert_eq!(e.values.len(), 2);
        assert_eq!(e.values[0][0], Some(vec![0.5, 0.5]));
        assert_eq!(e.values[0][1], None);
        assert_eq!(e.values[1][2], Some(vec![0.5, 0.5]));
        assert!(matches!(
            Tensor::new(vec![4], vec![0.0; 4]).unwrap().to_embeddings(),
            Err(TensorError::Shape { expected: 3, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let t = Tensor::from_f64(vec![3], [0.1, 0.2, 0.3]).unwrap();
        t.write(&p).unwrap();
        assert_eq!(Tensor::read(&p).unwrap(), t);
    }
}
