//! Low-rank branch compensation: factor the weight quantization error and
//! evaluate it as an auxiliary path next to the quantized weights.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::{svd_topk, Matrix};
use crate::math;
use crate::transforms::ScaleVector;
use crate::{Error, Result};

use super::LowRankBranch;

fn error_matrix(w: &Matrix, w_q_dequant: &Matrix) -> Result<Matrix> {
    if w.rows() != w_q_dequant.rows() || w.cols() != w_q_dequant.cols() {
        return Err(Error::ShapeMismatch(format!(
            "weights {}x{} vs dequantized {}x{}",
            w.rows(),
            w.cols(),
            w_q_dequant.rows(),
            w_q_dequant.cols()
        )));
    }
    w.sub(w_q_dequant)
}

/// Best rank-k factors of the quantization error `w - w_q`:
/// `a = U_k` (C_in x k), `b = S_k V_k^T` (k x C_out).
pub fn lowrank_compensate(w: &Matrix, w_q_dequant: &Matrix, k: usize) -> Result<LowRankBranch> {
    let delta = error_matrix(w, w_q_dequant)?;
    let f = svd_topk(&delta, k)?;
    let mut b = Matrix::zeros(k, delta.cols());
    for i in 0..k {
        for j in 0..delta.cols() {
            b[(i, j)] = f.sigma[i] * f.v[(j, i)];
        }
    }
    LowRankBranch::new(f.u, b)
}

/// Scale-weighted variant: factor `diag(s) (w - w_q)` and fold the inverse
/// scales back into the left factor, so salient input channels get a more
/// faithful correction.
pub fn scaled_lowrank_compensate(
    w: &Matrix,
    w_q_dequant: &Matrix,
    k: usize,
    s: &ScaleVector,
) -> Result<LowRankBranch> {
    let delta = error_matrix(w, w_q_dequant)?;
    if s.len() != delta.rows() {
        return Err(Error::ShapeMismatch(format!(
            "scale length {} vs {} input channels",
            s.len(),
            delta.rows()
        )));
    }
    let mut scaled = delta.clone();
    for (j, sj) in s.values().iter().enumerate() {
        for v in scaled.row_mut(j) {
            *v *= sj;
        }
    }
    let f = svd_topk(&scaled, k)?;
    let mut a = f.u;
    for (j, sj) in s.values().iter().enumerate() {
        for v in a.row_mut(j) {
            *v /= sj;
        }
    }
    let mut b = Matrix::zeros(k, delta.cols());
    for i in 0..k {
        for j in 0..delta.cols() {
            b[(i, j)] = f.sigma[i] * f.v[(j, i)];
        }
    }
    LowRankBranch::new(a, b)
}

/// Saliency scales from calibration activations: per-channel absolute
/// maxima, zero-max channels falling back to 1, normalized to geometric
/// mean 1 so the overall magnitude is untouched.
pub fn activation_scale_vector(x: &Matrix) -> Result<ScaleVector> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("activation_scale_vector"));
    }
    let mut s: Vec<f64> = (0..x.cols())
        .map(|j| {
            let mut m = 0.0f64;
            for i in 0..x.rows() {
                m = m.max(math::abs(x[(i, j)]));
            }
            if m == 0.0 {
                1.0
            } else {
                m
            }
        })
        .collect();
    let mean_log = s.iter().map(|v| math::ln(*v)).sum::<f64>() / s.len() as f64;
    let gm = math::exp(mean_log);
    for v in &mut s {
        *v /= gm;
    }
    ScaleVector::new(s)
}
