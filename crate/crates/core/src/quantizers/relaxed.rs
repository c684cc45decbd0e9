//! Smooth surrogate of fake quantization used by the transform optimizers:
//! rounding is replaced by the identity, leaving only the clip saturation,
//! whose bounds stay differentiable through the group max/min statistics.
//!
//! For uniform quantizers the clamp interval is `[clip*min, clip*max]`
//! (symmetric: `+-clip*max|v|`), so the gradient of a saturated entry routes
//! to the group's extremum entry. MXFP4 scales are powers of two (piecewise
//! constant in the inputs), so saturated MXFP4 entries pass no gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::Result;

use super::mxfp4::E2M1_MAX;
use super::{e8m0_exponent, ParamAxis, QuantFormat, QuantSpec};

#[derive(Clone, Copy)]
struct Anchor {
    hi_idx: usize,
    hi_coeff: f64,
    lo_idx: usize,
    lo_coeff: f64,
}

const PASS: u8 = 0;
const SAT_HIGH: u8 = 1;
const SAT_LOW: u8 = 2;

/// Forward pass output plus the bookkeeping needed to backpropagate through
/// the clamp.
pub(crate) struct RelaxedFakeQuant {
    pub out: Matrix,
    sat: Vec<u8>,
    anchors: Vec<Anchor>,
    axis: ParamAxis,
}

impl RelaxedFakeQuant {
    /// `clip` must already be resolved to a fixed ratio.
    pub fn forward(x: &Matrix, spec: &QuantSpec, clip: f64) -> Result<Self> {
        let axis = ParamAxis::from_granularity(spec.granularity);
        let rows = x.rows();
        let cols = x.cols();
        let n_groups = axis.group_count(rows, cols);

        // Group extrema with their locations.
        let mut max_v = vec![f64::NEG_INFINITY; n_groups];
        let mut min_v = vec![f64::INFINITY; n_groups];
        let mut max_idx = vec![0usize; n_groups];
        let mut min_idx = vec![0usize; n_groups];
        let mut amax = vec![0.0f64; n_groups];
        let mut amax_idx = vec![0usize; n_groups];
        for i in 0..rows {
            for j in 0..cols {
                let g = axis.group_of(cols, i, j);
                let v = x[(i, j)];
                let flat = i * cols + j;
                if v > max_v[g] {
                    max_v[g] = v;
                    max_idx[g] = flat;
                }
                if v < min_v[g] {
                    min_v[g] = v;
                    min_idx[g] = flat;
                }
                if math::abs(v) > amax[g] {
                    amax[g] = math::abs(v);
                    amax_idx[g] = flat;
                }
            }
        }

        let mut bounds = vec![(0.0f64, 0.0f64); n_groups];
        let mut anchors = vec![
            Anchor {
                hi_idx: 0,
                hi_coeff: 0.0,
                lo_idx: 0,
                lo_coeff: 0.0
            };
            n_groups
        ];
        for g in 0..n_groups {
            match spec.format {
                QuantFormat::Mxfp4 => {
                    let scale = math::exp2i(e8m0_exponent(clip * amax[g]));
                    let hi = E2M1_MAX * scale;
                    bounds[g] = (-hi, hi);
                    // Power-of-two staircase: zero derivative a.e.
                }
                QuantFormat::UniformInt => {
                    if spec.symmetric {
                        let sign = if x.data()[amax_idx[g]] >= 0.0 {
                            1.0
                        } else {
                            -1.0
                        };
                        let hi = clip * amax[g];
                        bounds[g] = (-hi, hi);
                        anchors[g] = Anchor {
                            hi_idx: amax_idx[g],
                            hi_coeff: clip * sign,
                            lo_idx: amax_idx[g],
                            lo_coeff: -clip * sign,
                        };
                    } else {
                        bounds[g] = (clip * min_v[g], clip * max_v[g]);
                        anchors[g] = Anchor {
                            hi_idx: max_idx[g],
                            hi_coeff: clip,
                            lo_idx: min_idx[g],
                            lo_coeff: clip,
                        };
                    }
                }
            }
        }

        let mut out = Matrix::zeros(rows, cols);
        let mut sat = vec![PASS; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let g = axis.group_of(cols, i, j);
                let (lo, hi) = bounds[g];
                let v = x[(i, j)];
                let flat = i * cols + j;
                if v > hi {
                    out[(i, j)] = hi;
                    sat[flat] = SAT_HIGH;
                } else if v < lo {
                    out[(i, j)] = lo;
                    sat[flat] = SAT_LOW;
                } else {
                    out[(i, j)] = v;
                }
            }
        }
        Ok(Self {
            out,
            sat,
            anchors,
            axis,
        })
    }

    /// Gradient with respect to the input, given the gradient with respect
    /// to the output.
    pub fn backward(&self, upstream: &Matrix) -> Matrix {
        let rows = upstream.rows();
        let cols = upstream.cols();
        let mut grad = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let flat = i * cols + j;
                let g = self.axis.group_of(cols, i, j);
                let up = upstream[(i, j)];
                match self.sat[flat] {
                    PASS => grad.row_mut(i)[j] += up,
                    SAT_HIGH => {
                        let a = self.anchors[g];
                        grad.row_mut(a.hi_idx / cols)[a.hi_idx % cols] += up * a.hi_coeff;
                    }
                    _ => {
                        let a = self.anchors[g];
                        grad.row_mut(a.lo_idx / cols)[a.lo_idx % cols] += up * a.lo_coeff;
                    }
                }
            }
        }
        grad
    }
}
