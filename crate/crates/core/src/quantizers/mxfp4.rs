//! MXFP4 codec: E2M1 elements in groups of 32 sharing a power-of-two E8M0
//! scale.
//!
//! The 16 nibble patterns decode to {0, +-0.5, +-1, +-1.5, +-2, +-3, +-4,
//! +-6} (zero twice); codes are denser near zero, which is what makes the
//! format friendlier to long-tailed data than INT4.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

use super::{ParamAxis, QuantParams, QuantSpec, QuantizedTensor};

/// Fixed MXFP4 group size.
pub const MXFP4_GROUP: usize = 32;

/// Largest E2M1 magnitude.
pub(crate) const E2M1_MAX: f64 = 6.0;

/// Decode one E2M1 nibble: sign bit, two exponent bits, one mantissa bit,
/// exponent bias 1, subnormal branch when the exponent field is zero.
pub fn e2m1_decode(nibble: u8) -> f64 {
    let nibble = nibble & 0xF;
    let sign = if nibble & 0x8 != 0 { -1.0 } else { 1.0 };
    let e = (nibble >> 1) & 0x3;
    let m = (nibble & 0x1) as f64;
    let magnitude = if e == 0 {
        // Subnormal: 2^(1-bias) * (0 + 2^-1 * M) with bias = 1.
        0.5 * m
    } else {
        math::exp2i(e as i32 - 1) * (1.0 + 0.5 * m)
    };
    sign * magnitude
}

/// Positive magnitude ladder, indexed by the low three nibble bits.
fn positive_values() -> [f64; 8] {
    core::array::from_fn(|i| e2m1_decode(i as u8))
}

/// Nearest-code encoding of `t` (already divided by the group scale).
/// Ties break toward the code whose mantissa bit is even (zero); values
/// beyond +-6 saturate.
fn e2m1_encode(t: f64) -> u8 {
    let values = positive_values();
    let mag = math::abs(t);
    let mut best = 0u8;
    let mut best_dist = f64::INFINITY;
    for (i, v) in values.iter().enumerate() {
        let d = math::abs(mag - v);
        if d < best_dist || (d == best_dist && i as u8 & 1 == 0) {
            best_dist = d;
            best = i as u8;
        }
    }
    if t < 0.0 && best != 0 {
        best | 0x8
    } else {
        best
    }
}

/// Nearest-code nibble for an already-scaled value.
pub(crate) fn encode_nibble(t: f64) -> u8 {
    e2m1_encode(t)
}

/// The one or two nibbles whose decoded values bracket `t` (grid neighbors
/// for the brute-force rounding oracle); saturates past +-6.
pub(crate) fn encode_nibble_candidates(t: f64) -> Vec<u8> {
    let values = positive_values();
    let mag = math::abs(t);
    let signed = |i: usize| -> u8 {
        if t < 0.0 && i != 0 {
            i as u8 | 0x8
        } else {
            i as u8
        }
    };
    if mag >= E2M1_MAX {
        return vec![signed(7)];
    }
    // mag < 6 here, so `lower` tops out at 6 and `lower + 1` stays in range.
    let mut lower = 0usize;
    for (i, v) in values.iter().enumerate() {
        if *v <= mag {
            lower = i;
        }
    }
    let mut out = vec![signed(lower)];
    if values[lower] < mag {
        out.push(signed(lower + 1));
    }
    out
}

/// E8M0 exponent for a group with absolute maximum `amax` (post-clip):
/// `ceil(log2(amax / 6))`, clamped to the representable [-127, 127].
/// An all-zero group reports exponent 0.
pub fn e8m0_exponent(amax: f64) -> i32 {
    if amax <= 0.0 {
        return 0;
    }
    let e = math::ceil(math::log2(amax / E2M1_MAX));
    (e as i32).clamp(-127, 127)
}

pub(super) fn compute_mxfp4_params(x: &Matrix, axis: ParamAxis, clip: f64) -> Result<QuantParams> {
    if !matches!(axis, ParamAxis::GroupsAlongRow(MXFP4_GROUP)) {
        return Err(Error::InvalidSpec(
            "mxfp4 parameters are per-group(32) along rows".into(),
        ));
    }
    let n = axis.group_count(x.rows(), x.cols());
    let mut amax = vec![0.0f64; n];
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let g = axis.group_of(x.cols(), i, j);
            amax[g] = amax[g].max(math::abs(x[(i, j)]));
        }
    }
    let scales = amax
        .into_iter()
        .map(|m| math::exp2i(e8m0_exponent(clip * m)))
        .collect();
    Ok(QuantParams {
        axis,
        scales,
        zero_points: None,
    })
}

pub(super) fn quantize_codes(
    x: &Matrix,
    spec: &QuantSpec,
    params: &QuantParams,
) -> Result<QuantizedTensor> {
    let rows = x.rows();
    let cols = x.cols();
    let mut codes = vec![0i64; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let g = params.axis.group_of(cols, i, j);
            codes[i * cols + j] = e2m1_encode(x[(i, j)] / params.scales[g]) as i64;
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
    for i in 0..q.rows {
        for j in 0..q.cols {
            let g = q.params.axis.group_of(q.cols, i, j);
            data[i * q.cols + j] = e2m1_decode(q.codes[i * q.cols + j] as u8) * q.params.scales[g];
        }
    }
    Ok(Matrix::raw(q.rows, q.cols, data))
}

/// Quantize `x` to MXFP4 with the given clip ratio. Groups of 32 run along
/// each row; a trailing partial group carries its own scale.
pub fn mxfp4_quantize(x: &Matrix, clip: f64) -> Result<QuantizedTensor> {
    if !(clip > 0.0 && clip <= 1.0) {
        return Err(Error::InvalidSpec(alloc::format!(
            "clip ratio {clip} not in (0, 1]"
        )));
    }
    let spec = QuantSpec::mxfp4().with_clip(super::ClipPolicy::Fixed(clip));
    let axis = ParamAxis::GroupsAlongRow(MXFP4_GROUP);
    let params = compute_mxfp4_params(x, axis, clip)?;
    quantize_codes(x, &spec, &params)
}

/// Decode an MXFP4 tensor produced by [`mxfp4_quantize`].
pub fn mxfp4_dequantize(q: &QuantizedTensor) -> Result<Matrix> {
    if q.spec.format != super::QuantFormat::Mxfp4 {
        return Err(Error::InvalidSpec("tensor is not mxfp4".into()));
    }
    dequantize_codes(q)
}
