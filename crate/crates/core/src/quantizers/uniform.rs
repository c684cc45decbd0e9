//! Uniform integer quantization: min-max scales, optional zero point.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

use super::{ParamAxis, QuantParams, QuantSpec, QuantizedTensor};

struct GroupStats {
    min: f64,
    max: f64,
    amax: f64,
}

fn group_stats(x: &Matrix, axis: ParamAxis) -> Vec<GroupStats> {
    let n = axis.group_count(x.rows(), x.cols());
    let mut stats: Vec<GroupStats> = (0..n)
        .map(|_| GroupStats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            amax: 0.0,
        })
        .collect();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let g = axis.group_of(x.cols(), i, j);
            let v = x[(i, j)];
            let s = &mut stats[g];
            s.min = s.min.min(v);
            s.max = s.max.max(v);
            s.amax = s.amax.max(math::abs(v));
        }
    }
    stats
}

pub(super) fn compute_uniform_params(
    x: &Matrix,
    spec: &QuantSpec,
    axis: ParamAxis,
    clip: f64,
) -> Result<QuantParams> {
    let stats = group_stats(x, axis);
    let n = stats.len();
    let mut scales = vec![0.0; n];
    if spec.symmetric {
        let qmax = spec.symmetric_qmax() as f64;
        for (g, s) in stats.iter().enumerate() {
            scales[g] = if s.amax == 0.0 {
                1.0
            } else {
                clip * s.amax / qmax
            };
        }
        Ok(QuantParams {
            axis,
            scales,
            zero_points: None,
        })
    } else {
        let qmax = spec.asymmetric_qmax();
        let levels = qmax as f64;
        let mut zeros = vec![0i64; n];
        for (g, s) in stats.iter().enumerate() {
            // Nudge the clipped range to include zero: keeps the zero point
            // inside the code range and zero exactly representable.
            let lo = (clip * s.min).min(0.0);
            let hi = (clip * s.max).max(0.0);
            if hi == lo {
                // All-zero group.
                scales[g] = 1.0;
                zeros[g] = 0;
            } else {
                let delta = (hi - lo) / levels;
                scales[g] = delta;
                let z = math::round_half_away(-lo / delta);
                zeros[g] = (z as i64).clamp(0, qmax);
            }
        }
        Ok(QuantParams {
            axis,
            scales,
            zero_points: Some(zeros),
        })
    }
}

pub(super) fn quantize_codes(
    x: &Matrix,
    spec: &QuantSpec,
    params: &QuantParams,
) -> Result<QuantizedTensor> {
    if params
        .scales
        .iter()
        .any(|d| d.is_nan() || *d <= 0.0 || !d.is_finite())
    {
        return Err(Error::InvalidSpec("non-positive quantization scale".into()));
    }
    let rows = x.rows();
    let cols = x.cols();
    let mut codes = vec![0i64; rows * cols];
    if spec.symmetric {
        let qmax = spec.symmetric_qmax();
        for i in 0..rows {
            for j in 0..cols {
                let g = params.axis.group_of(cols, i, j);
                let c = spec.round(x[(i, j)] / params.scales[g]) as i64;
                codes[i * cols + j] = c.clamp(-qmax, qmax);
            }
        }
    } else {
        let qmax = spec.asymmetric_qmax();
        let zeros = params
            .zero_points
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("asymmetric spec without zero points".into()))?;
        for i in 0..rows {
            for j in 0..cols {
                let g = params.axis.group_of(cols, i, j);
                let c = spec.round(x[(i, j)] / params.scales[g]) as i64 + zeros[g];
                codes[i * cols + j] = c.clamp(0, qmax);
            }
        }
    }
    Ok(QuantizedTensor {
        rows,
        cols,
        codes,
        params: params.clone(),
        spec: spec.clone(),
    })
}

pub(super) fn dequantize_codes(q: &QuantizedTensor) -> Result<Matrix> {
    let mut data = vec![0.0; q.rows * q.cols];
    match &q.params.zero_points {
        None => {
            for i in 0..q.rows {
                for j in 0..q.cols {
                    let g = q.params.axis.group_of(q.cols, i, j);
                    data[i * q.cols + j] = q.codes[i * q.cols + j] as f64 * q.params.scales[g];
                }
            }
        }
        Some(zeros) => {
            for i in 0..q.rows {
                for j in 0..q.cols {
                    let g = q.params.axis.group_of(q.cols, i, j);
                    data[i * q.cols + j] =
                        (q.codes[i * q.cols + j] - zeros[g]) as f64 * q.params.scales[g];
                }
            }
        }
    }
    Ok(Matrix::raw(q.rows, q.cols, data))
}
