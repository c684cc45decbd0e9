//! Layer and model bundles: the unit everything else operates on.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::{Error, Result};

/// One linear layer: weights `w` (C_in x C_out), optional bias (C_out) and
/// calibration activations `calib` (tokens x C_in).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBundle {
    pub name: String,
    pub w: Matrix,
    pub bias: Option<Vec<f64>>,
    pub calib: Matrix,
}

impl LayerBundle {
    pub fn new(
        name: impl Into<String>,
        w: Matrix,
        bias: Option<Vec<f64>>,
        calib: Matrix,
    ) -> Result<Self> {
        let name = name.into();
        if calib.cols() != w.rows() {
            return Err(Error::ShapeMismatch(format!(
                "layer '{name}': calib has {} channels, weights expect {}",
                calib.cols(),
                w.rows()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != w.cols() {
                return Err(Error::ShapeMismatch(format!(
                    "layer '{name}': bias length {} vs {} output channels",
                    b.len(),
                    w.cols()
                )));
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("bias"));
            }
        }
        Ok(Self {
            name,
            w,
            bias,
            calib,
        })
    }

    pub fn c_in(&self) -> usize {
        self.w.rows()
    }

    pub fn c_out(&self) -> usize {
        self.w.cols()
    }

    pub fn tokens(&self) -> usize {
        self.calib.rows()
    }

    /// Full-precision layer output on the bundled calibration activations.
    pub fn output(&self) -> Result<Matrix> {
        self.output_for(&self.calib)
    }

    /// Full-precision output `x w + bias` for arbitrary activations.
    pub fn output_for(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.w)?;
        if let Some(b) = &self.bias {
            for i in 0..y.rows() {
                let row = y.row_mut(i);
                for (j, bj) in b.iter().enumerate() {
                    row[j] += bj;
                }
            }
        }
        Ok(y)
    }

    /// Same layer with a different calibration matrix (shape-checked).
    pub fn with_calib(&self, calib: Matrix) -> Result<Self> {
        Self::new(self.name.clone(), self.w.clone(), self.bias.clone(), calib)
    }
}

/// An ordered list of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub layers: Vec<LayerBundle>,
}

impl ModelBundle {
    pub fn new(layers: Vec<LayerBundle>) -> Self {
        Self { layers }
    }
}
