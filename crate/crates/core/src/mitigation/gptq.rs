//! Hessian-feedback weight rounding.
//!
//! `gptq_quantize` walks the input-channel axis in blocks, quantizing one
//! coordinate at a time and spreading the scaled residual onto the
//! not-yet-quantized coordinates via the upper Cholesky factor of the inverse
//! Hessian. `ldlq_quantize` reaches the same assignments through closed-form
//! linear feedback from a (reversed-order) LDL factorization of the Hessian
//! itself; their agreement is this module's central cross-check.
//! `brute_force_round` is the exhaustive oracle over nearest-grid-neighbor
//! assignments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky, ldl_decompose, spd_inverse, Matrix};
use crate::math;
use crate::quantizers::{
    compute_params, e2m1_decode, encode_nibble_candidates, ParamAxis, QuantFormat, QuantParams,
    QuantSpec, QuantizedTensor,
};
use crate::{Error, Result};

use super::{proxy_loss_rows, Hessian, MitigationResult};

/// Quantization parameters for output-channel-major weights, with any clip
/// search resolved against the original (uncompensated) values and held
/// fixed afterwards.
pub(crate) fn weight_params(w_t: &Matrix, spec: &QuantSpec) -> Result<QuantParams> {
    let axis = ParamAxis::from_granularity(spec.granularity);
    compute_params(w_t, spec, axis)
}

/// Scalar quantizer for one entry of the output-channel-major weight matrix.
struct EntryQuantizer<'a> {
    spec: &'a QuantSpec,
    params: &'a QuantParams,
    cols: usize,
}

impl<'a> EntryQuantizer<'a> {
    fn new(spec: &'a QuantSpec, params: &'a QuantParams, cols: usize) -> Self {
        Self { spec, params, cols }
    }

    /// Nearest code and its dequantized value. Values that drifted outside
    /// the clip range clamp to it.
    fn quantize(&self, row: usize, col: usize, v: f64) -> (i64, f64) {
        let g = self.params.axis.group_of(self.cols, row, col);
        let scale = self.params.scales[g];
        match self.spec.format {
            QuantFormat::Mxfp4 => {
                let code = crate::quantizers::encode_nibble(v / scale) as i64;
                (code, e2m1_decode(code as u8) * scale)
            }
            QuantFormat::UniformInt => {
                if self.spec.symmetric {
                    let qmax = self.spec.symmetric_qmax();
                    let c = (self.spec.round(v / scale) as i64).clamp(-qmax, qmax);
                    (c, c as f64 * scale)
                } else {
                    let z = self.params.zero_points.as_ref().expect("asym zeros")[g];
                    let qmax = self.spec.asymmetric_qmax();
                    let c = (self.spec.round(v / scale) as i64 + z).clamp(0, qmax);
                    (c, (c - z) as f64 * scale)
                }
            }
        }
    }

    /// The one or two grid codes bracketing `v` (floor/ceil neighbors,
    /// clamped to the representable range).
    fn neighbors(&self, row: usize, col: usize, v: f64) -> Vec<(i64, f64)> {
        let g = self.params.axis.group_of(self.cols, row, col);
        let scale = self.params.scales[g];
        match self.spec.format {
            QuantFormat::Mxfp4 => encode_nibble_candidates(v / scale)
                .into_iter()
                .map(|c| (c as i64, e2m1_decode(c) * scale))
                .collect(),
            QuantFormat::UniformInt => {
                let (zero, lo, hi) = if self.spec.symmetric {
                    let q = self.spec.symmetric_qmax();
                    (0i64, -q, q)
                } else {
                    let z = self.params.zero_points.as_ref().expect("asym zeros")[g];
                    (z, 0, self.spec.asymmetric_qmax())
                };
                let u = v / scale;
                let base = math::floor(u) as i64 + zero;
                let mut out = Vec::with_capacity(2);
                for c in [base, base + 1] {
                    let c = c.clamp(lo, hi);
                    if !out.iter().any(|(e, _)| *e == c) {
                        out.push((c, (c - zero) as f64 * scale));
                    }
                }
                out
            }
        }
    }
}

fn check_inputs(w: &Matrix, h: &Hessian, spec: &QuantSpec) -> Result<()> {
    spec.validate()?;
    if w.rows() != h.dim() {
        return Err(Error::ShapeMismatch(format!(
            "weights have {} input channels, Hessian is {}x{}",
            w.rows(),
            h.dim(),
            h.dim()
        )));
    }
    Ok(())
}

fn result_from_codes(
    codes: Vec<i64>,
    deq: Matrix,
    w_t: &Matrix,
    h: &Hessian,
    spec: &QuantSpec,
    params: QuantParams,
) -> Result<MitigationResult> {
    let proxy: f64 = proxy_loss_rows(&deq, w_t, h)?.iter().sum();
    Ok(MitigationResult {
        w_q: QuantizedTensor {
            rows: w_t.rows(),
            cols: w_t.cols(),
            codes,
            params,
            spec: spec.clone(),
        },
        branch: None,
        proxy_loss: proxy,
    })
}

/// Round-to-nearest baseline: same parameters, no cross-coordinate
/// compensation.
pub fn rtn_quantize(w: &Matrix, h: &Hessian, spec: &QuantSpec) -> Result<MitigationResult> {
    check_inputs(w, h, spec)?;
    let w_t = w.transpose();
    let params = weight_params(&w_t, spec)?;
    let eq = EntryQuantizer::new(spec, &params, w_t.cols());
    let mut codes = vec![0i64; w_t.rows() * w_t.cols()];
    let mut deq = Matrix::zeros(w_t.rows(), w_t.cols());
    for r in 0..w_t.rows() {
        for c in 0..w_t.cols() {
            let (code, dv) = eq.quantize(r, c, w_t[(r, c)]);
            codes[r * w_t.cols() + c] = code;
            deq[(r, c)] = dv;
        }
    }
    result_from_codes(codes, deq, &w_t, h, spec, params)
}

/// Column-block Hessian-feedback quantization.
///
/// Processes input-channel coordinates in natural order within blocks of
/// `block` columns; after quantizing a coordinate, the scaled residual is
/// distributed onto the not-yet-quantized coordinates of the block, and the
/// remainder of the matrix is updated once per block. Quantization
/// parameters come from the original weights and stay fixed throughout.
pub fn gptq_quantize(
    w: &Matrix,
    h: &Hessian,
    spec: &QuantSpec,
    block: usize,
) -> Result<MitigationResult> {
    if block == 0 {
        return Err(Error::InvalidArgument("block size must be >= 1".into()));
    }
    check_inputs(w, h, spec)?;
    let n = w.rows();
    let block = block.min(n);

    // Upper factor with H^-1 = U^T U; row j carries the feedback for
    // eliminating coordinate j.
    let hinv = spd_inverse(h.matrix())?;
    let u = cholesky(&hinv)?.transpose();

    let w_t = w.transpose();
    let rows = w_t.rows();
    let params = weight_params(&w_t, spec)?;
    let eq = EntryQuantizer::new(spec, &params, n);

    let mut work = w_t.clone();
    let mut deq = Matrix::zeros(rows, n);
    let mut codes = vec![0i64; rows * n];

    let mut bs = 0;
    while bs < n {
        let be = (bs + block).min(n);
        let mut scaled_err = Matrix::zeros(rows, be - bs);
        for j in bs..be {
            let ujj = u[(j, j)];
            for r in 0..rows {
                let v = work[(r, j)];
                let (code, dv) = eq.quantize(r, j, v);
                codes[r * n + j] = code;
                deq[(r, j)] = dv;
                let e = (v - dv) / ujj;
                scaled_err[(r, j - bs)] = e;
                for k in (j + 1)..be {
                    work[(r, k)] -= e * u[(j, k)];
                }
            }
        }
        // Push the block's accumulated error onto the remainder.
        for r in 0..rows {
            for k in be..n {
                let mut acc = 0.0;
                for j in bs..be {
                    acc += scaled_err[(r, j - bs)] * u[(j, k)];
                }
                work[(r, k)] -= acc;
            }
        }
        bs = be;
    }
    result_from_codes(codes, deq, &w_t, h, spec, params)
}

/// Adaptive rounding with linear feedback from an LDL factorization.
///
/// The feedback matrix is the unit-upper factor of `H = U D U^T`, obtained
/// by LDL-decomposing the index-reversed Hessian (so feedback flows from
/// already-quantized coordinates to later ones in natural order). For a full
/// block this reproduces `gptq_quantize` exactly, up to float noise.
pub fn ldlq_quantize(w: &Matrix, h: &Hessian, spec: &QuantSpec) -> Result<MitigationResult> {
    check_inputs(w, h, spec)?;
    let n = w.rows();

    // Reverse both index orders, factor, and map the unit-lower factor back:
    // H = (J L J) (J D J) (J L J)^T with J L J unit upper.
    let hm = h.matrix();
    let mut rev = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            rev[(i, j)] = hm[(n - 1 - i, n - 1 - j)];
        }
    }
    let (l, _d) = ldl_decompose(&rev)?;
    let mut feedback = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            feedback[(i, j)] = l[(n - 1 - i, n - 1 - j)];
        }
    }

    let w_t = w.transpose();
    let rows = w_t.rows();
    let params = weight_params(&w_t, spec)?;
    let eq = EntryQuantizer::new(spec, &params, n);

    let mut deq = Matrix::zeros(rows, n);
    let mut codes = vec![0i64; rows * n];
    // err[r][j] = quantized - original, fed forward into later coordinates.
    let mut err = Matrix::zeros(rows, n);
    for k in 0..n {
        for r in 0..rows {
            let mut v = w_t[(r, k)];
            for j in 0..k {
                v -= err[(r, j)] * feedback[(j, k)];
            }
            let (code, dv) = eq.quantize(r, k, v);
            codes[r * n + k] = code;
            deq[(r, k)] = dv;
            err[(r, k)] = dv - w_t[(r, k)];
        }
    }
    result_from_codes(codes, deq, &w_t, h, spec, params)
}

/// Exhaustive oracle: per output channel, try every assignment of
/// floor/ceil grid neighbors and keep the one minimizing the quadratic
/// proxy. Exact optimum over nearest-neighbor roundings; exponential in
/// `C_in`, so capped at 16 input channels.
pub fn brute_force_round(w: &Matrix, h: &Hessian, spec: &QuantSpec) -> Result<MitigationResult> {
    check_inputs(w, h, spec)?;
    let n = w.rows();
    if n > 16 {
        return Err(Error::InvalidArgument(format!(
            "brute_force_round enumerates 2^C_in assignments; C_in = {n} > 16"
        )));
    }
    let w_t = w.transpose();
    let rows = w_t.rows();
    let params = weight_params(&w_t, spec)?;
    let eq = EntryQuantizer::new(spec, &params, n);
    let hm = h.matrix();

    let mut deq = Matrix::zeros(rows, n);
    let mut codes = vec![0i64; rows * n];
    for r in 0..rows {
        let cands: Vec<Vec<(i64, f64)>> = (0..n).map(|c| eq.neighbors(r, c, w_t[(r, c)])).collect();
        let mut idx = vec![0usize; n];
        let mut best_loss = f64::INFINITY;
        let mut best: Vec<(i64, f64)> = cands.iter().map(|v| v[0]).collect();
        let mut delta = vec![0.0; n];
        loop {
            for c in 0..n {
                delta[c] = cands[c][idx[c]].1 - w_t[(r, c)];
            }
            let mut loss = 0.0;
            for i in 0..n {
                if delta[i] == 0.0 {
                    continue;
                }
                let hrow = hm.row(i);
                let mut inner = 0.0;
                for j in 0..n {
                    inner += hrow[j] * delta[j];
                }
                loss += delta[i] * inner;
            }
            if loss < best_loss {
                best_loss = loss;
                for c in 0..n {
                    best[c] = cands[c][idx[c]];
                }
            }
            // Mixed-radix odometer over the candidate lists.
            let mut pos = 0;
            loop {
                if pos == n {
                    break;
                }
                idx[pos] += 1;
                if idx[pos] < cands[pos].len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == n {
                break;
            }
        }
        for c in 0..n {
            codes[r * n + c] = best[c].0;
            deq[(r, c)] = best[c].1;
        }
    }
    result_from_codes(codes, deq, &w_t, h, spec, params)
}
