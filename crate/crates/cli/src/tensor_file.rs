//! QTNS binary tensor files.
//!
//! Layout (all multi-byte integers little-endian):
//! - magic: 4 bytes `QTNS`
//! - version: 1 byte, currently 1
//! - dtype: 1 byte (0 = f32, 1 = f64)
//! - ndim: 1 byte (1..=4)
//! - reserved: 1 byte, 0
//! - dims: ndim x u64
//! - payload: row-major values, little-endian

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use quantlab_core::linalg::Matrix;

use crate::error::CliError;

pub const MAGIC: [u8; 4] = *b"QTNS";
pub const VERSION: u8 = 1;
pub const MAX_NDIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn from_matrix(m: &Matrix) -> TensorFile {
        TensorFile {
            dims: vec![m.rows() as u64, m.cols() as u64],
            data: TensorData::F64(m.data().to_vec()),
        }
    }

    pub fn from_vector(v: &[f64]) -> TensorFile {
        TensorFile {
            dims: vec![v.len() as u64],
            data: TensorData::F64(v.to_vec()),
        }
    }

    /// Interpret as a matrix: 2-D tensors directly, 1-D as a single row.
    pub fn to_matrix(&self) -> Result<Matrix, CliError> {
        let (rows, cols) = match self.dims.len() {
            1 => (1, self.dims[0] as usize),
            2 => (self.dims[0] as usize, self.dims[1] as usize),
            n => {
                return Err(CliError::validation(format!(
                    "expected a 1-D or 2-D tensor, got {n} dims"
                )))
            }
        };
        Matrix::new(rows, cols, self.data.to_f64()).map_err(|e| CliError::validation(e.to_string()))
    }

    pub fn to_vector(&self) -> Result<Vec<f64>, CliError> {
        if self.dims.len() != 1 {
            return Err(CliError::validation(format!(
                "expected a 1-D tensor, got {} dims",
                self.dims.len()
            )));
        }
        Ok(self.data.to_f64())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CliError> {
        let ndim = self.dims.len();
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(CliError::validation(format!(
                "tensor ndim must be 1..={MAX_NDIM}, got {ndim}"
            )));
        }
        let count: u64 = self.dims.iter().product();
        if count as usize != self.data.len() {
            return Err(CliError::validation(format!(
                "payload has {} values, dims imply {count}",
                self.data.len()
            )));
        }
        let dtype = match self.data {
            TensorData::F32(_) => 0u8,
            TensorData::F64(_) => 1u8,
        };
        w.write_all(&MAGIC)?;
        w.write_all(&[VERSION, dtype, ndim as u8, 0])?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<TensorFile, CliError> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header)?;
        if header[0..4] != MAGIC {
            return Err(CliError::validation("bad magic; not a QTNS tensor file"));
        }
        if header[4] != VERSION {
            return Err(CliError::validation(format!(
                "unsupported tensor file version {}",
                header[4]
            )));
        }
        let dtype = header[5];
        let ndim = header[6] as usize;
        if header[7] != 0 {
            return Err(CliError::validation("reserved header byte must be 0"));
        }
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(CliError::validation(format!(
                "tensor ndim must be 1..={MAX_NDIM}, got {ndim}"
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut buf8 = [0u8; 8];
        for _ in 0..ndim {
            r.read_exact(&mut buf8)?;
            dims.push(u64::from_le_bytes(buf8));
        }
        let count: u64 = dims.iter().product();
        let count = usize::try_from(count)
            .map_err(|_| CliError::validation("tensor too large for this platform"))?;
        let data = match dtype {
            0 => {
                let mut bytes = vec![0u8; count * 4];
                r.read_exact(&mut bytes)?;
                TensorData::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            1 => {
                let mut bytes = vec![0u8; count * 8];
                r.read_exact(&mut bytes)?;
                TensorData::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| {
                            f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                        })
                        .collect(),
                )
            }
            other => {
                return Err(CliError::validation(format!(
                    "unknown dtype byte {other} (expected 0=f32 or 1=f64)"
                )))
            }
        };
        Ok(TensorFile { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let file = fs::File::create(path)
            .map_err(|e| CliError::Io(format!("create {}: {e}", path.display())))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read(path: &Path) -> Result<TensorFile, CliError> {
        let file = fs::File::open(path)
            .map_err(|e| CliError::Io(format!("open {}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
