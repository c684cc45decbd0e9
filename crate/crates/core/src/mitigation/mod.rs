//! Quantization error mitigation: Hessian-feedback rounding (column-block
//! and LDL-feedback variants), a brute-force rounding oracle, and low-rank
//! branch compensation.
//!
//! Weights enter as `C_in x C_out` and are quantized in output-channel-major
//! orientation (`C_out x C_in`): each output channel's weight vector is one
//! row, compensated along the input-channel axis the Hessian lives on.

mod gptq;
mod lowrank;

pub use gptq::{brute_force_round, gptq_quantize, ldlq_quantize, rtn_quantize};
pub use lowrank::{activation_scale_vector, lowrank_compensate, scaled_lowrank_compensate};

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::quantizers::{dequantize, QuantizedTensor};
use crate::{Error, Result};

/// Damped layer-wise Hessian proxy `2 X^T X + damping * mean(diag) * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    h: Matrix,
    damping: f64,
}

impl Hessian {
    /// Wrap an already-formed (damped) Hessian; must be square.
    pub fn new(h: Matrix, damping: f64) -> Result<Self> {
        if h.rows() != h.cols() {
            return Err(Error::ShapeMismatch(format!(
                "Hessian must be square, got {}x{}",
                h.rows(),
                h.cols()
            )));
        }
        Ok(Self { h, damping })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.h
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }
}

/// Build the damped Hessian proxy from calibration activations
/// (`tokens x C_in`). Positive-definiteness is checked where it is needed:
/// a Cholesky failure downstream means `damping` must be raised.
pub fn build_hessian(x: &Matrix, damping: f64) -> Result<Hessian> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("build_hessian"));
    }
    if damping.is_nan() || damping < 0.0 || !damping.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "damping must be finite and >= 0, got {damping}"
        )));
    }
    let mut h = x.transpose().matmul(x)?.scale(2.0);
    let n = h.rows();
    let mean_diag = (0..n).map(|i| h[(i, i)]).sum::<f64>() / n as f64;
    let add = damping * mean_diag;
    for i in 0..n {
        h[(i, i)] += add;
    }
    Hessian::new(h, damping)
}

/// Rank-r branch approximating the weight quantization error; evaluated at
/// inference as the extra term `(x a) b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankBranch {
    pub a: Matrix,
    pub b: Matrix,
}

impl LowRankBranch {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(Error::ShapeMismatch(format!(
                "branch factors {}x{} and {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// The dense `a b` product (C_in x C_out).
    pub fn dense(&self) -> Result<Matrix> {
        self.a.matmul(&self.b)
    }
}

/// Output of a weight-quantization pass: codes in output-channel-major
/// orientation, an optional compensation branch, and the quadratic proxy
/// loss summed over output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MitigationResult {
    pub w_q: QuantizedTensor,
    pub branch: Option<LowRankBranch>,
    pub proxy_loss: f64,
}

impl MitigationResult {
    /// Dequantized weights back in layer orientation (C_in x C_out).
    pub fn dequantized_weights(&self) -> Result<Matrix> {
        Ok(dequantize(&self.w_q)?.transpose())
    }
}

/// Per-output-channel proxy losses `delta H delta^T` with
/// `delta = quantized - original`, both in output-channel-major orientation.
pub fn proxy_loss_rows(w_q_t: &Matrix, w_t: &Matrix, h: &Hessian) -> Result<Vec<f64>> {
    if w_q_t.rows() != w_t.rows() || w_q_t.cols() != w_t.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            w_q_t.rows(),
            w_q_t.cols(),
            w_t.rows(),
            w_t.cols()
        )));
    }
    if w_t.cols() != h.dim() {
        return Err(Error::ShapeMismatch(format!(
            "weights have {} input channels, Hessian is {}x{}",
            w_t.cols(),
            h.dim(),
            h.dim()
        )));
    }
    let n = h.dim();
    let hm = h.matrix();
    let mut losses = Vec::with_capacity(w_t.rows());
    for r in 0..w_t.rows() {
        let wq = w_q_t.row(r);
        let wo = w_t.row(r);
        let mut acc = 0.0;
        for i in 0..n {
            let di = wq[i] - wo[i];
            if di == 0.0 {
                continue;
            }
            let hrow = hm.row(i);
            let mut inner = 0.0;
            for j in 0..n {
                inner += hrow[j] * (wq[j] - wo[j]);
            }
            acc += di * inner;
        }
        losses.push(acc);
    }
    Ok(losses)
}

/// Quantized layer output `x w_q + (x a) b + bias`.
pub fn layer_output(
    x: &Matrix,
    w_q_dequant: &Matrix,
    branch: Option<&LowRankBranch>,
    bias: Option<&[f64]>,
) -> Result<Matrix> {
    let mut y = x.matmul(w_q_dequant)?;
    if let Some(br) = branch {
        let xa = x.matmul(&br.a)?;
        let extra = xa.matmul(&br.b)?;
        y = y.add(&extra)?;
    }
    if let Some(b) = bias {
        if b.len() != y.cols() {
            return Err(Error::ShapeMismatch(format!(
                "bias length {} vs {} output channels",
                b.len(),
                y.cols()
            )));
        }
        for i in 0..y.rows() {
            let row = y.row_mut(i);
            for (j, bj) in b.iter().enumerate() {
                row[j] += bj;
            }
        }
    }
    Ok(y)
}
