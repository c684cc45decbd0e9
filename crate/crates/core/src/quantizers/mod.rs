//! Fake quantization (quantize-then-dequantize) for uniform INT formats and
//! MXFP4, covering symmetry, granularity, clipping and bit-overhead
//! accounting.

mod mxfp4;
pub(crate) mod relaxed;
mod uniform;

pub use mxfp4::{e2m1_decode, e8m0_exponent, mxfp4_dequantize, mxfp4_quantize, MXFP4_GROUP};
pub(crate) use mxfp4::{encode_nibble, encode_nibble_candidates};

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

/// Number format of a quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantFormat {
    UniformInt,
    Mxfp4,
}

/// The unit sharing one (scale, zero point) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    PerTensor,
    /// One parameter set per row (per output channel for weights laid out
    /// row-wise, per token for activations).
    PerRow,
    /// Contiguous groups of the given size along each row; a trailing
    /// partial group carries its own parameters.
    PerGroup(usize),
}

/// Clipping policy applied to the min/max statistics before scale
/// computation.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipPolicy {
    /// Fixed ratio in (0, 1].
    Fixed(f64),
    /// Linear search over the squared reconstruction error on this grid.
    Search(Vec<f64>),
}

impl ClipPolicy {
    /// Default search grid: 0.50 to 1.00 in steps of 0.01.
    pub fn default_search() -> ClipPolicy {
        ClipPolicy::Search((50..=100).map(|i| i as f64 / 100.0).collect())
    }
}

/// Rounding mode for code assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    HalfAwayFromZero,
    HalfToEven,
}

/// Denominator convention for the symmetric scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignedRange {
    /// `2^N - 1` levels on each side (min-max formula applied as written).
    Full,
    /// `2^(N-1) - 1` levels, the conventional signed-symmetric range.
    Balanced,
}

/// Full description of one quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantSpec {
    pub format: QuantFormat,
    pub bits: u32,
    pub symmetric: bool,
    pub granularity: Granularity,
    pub clip: ClipPolicy,
    pub rounding: Rounding,
    pub signed_range: SignedRange,
}

impl QuantSpec {
    /// Uniform integer quantizer with the defaults used throughout:
    /// symmetric, per-row, no clipping, half-away-from-zero, balanced range.
    pub fn uniform(bits: u32) -> QuantSpec {
        QuantSpec {
            format: QuantFormat::UniformInt,
            bits,
            symmetric: true,
            granularity: Granularity::PerRow,
            clip: ClipPolicy::Fixed(1.0),
            rounding: Rounding::HalfAwayFromZero,
            signed_range: SignedRange::Balanced,
        }
    }

    /// MXFP4: 4-bit E2M1 elements, symmetric, per-group(32) E8M0 scales.
    pub fn mxfp4() -> QuantSpec {
        QuantSpec {
            format: QuantFormat::Mxfp4,
            bits: 4,
            symmetric: true,
            granularity: Granularity::PerGroup(MXFP4_GROUP),
            clip: ClipPolicy::Fixed(1.0),
            rounding: Rounding::HalfToEven,
            signed_range: SignedRange::Balanced,
        }
    }

    pub fn with_symmetric(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn with_clip(mut self, clip: ClipPolicy) -> Self {
        self.clip = clip;
        self
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn with_signed_range(mut self, signed_range: SignedRange) -> Self {
        self.signed_range = signed_range;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.format {
            QuantFormat::UniformInt => {
                if !(2..=16).contains(&self.bits) {
                    return Err(Error::InvalidSpec(format!(
                        "uniform-int bits must be in 2..=16, got {}",
                        self.bits
                    )));
                }
            }
            QuantFormat::Mxfp4 => {
                if self.bits != 4 {
                    return Err(Error::InvalidSpec(format!(
                        "mxfp4 forces bits=4, got {}",
                        self.bits
                    )));
                }
                if !self.symmetric {
                    return Err(Error::InvalidSpec("mxfp4 forces symmetric".into()));
                }
                if self.granularity != Granularity::PerGroup(MXFP4_GROUP) {
                    return Err(Error::InvalidSpec(format!(
                        "mxfp4 forces per-group({MXFP4_GROUP}) granularity"
                    )));
                }
            }
        }
        if let Granularity::PerGroup(0) = self.granularity {
            return Err(Error::InvalidSpec("group size must be >= 1".into()));
        }
        match &self.clip {
            ClipPolicy::Fixed(r) => {
                if !(*r > 0.0 && *r <= 1.0) {
                    return Err(Error::InvalidSpec(format!("clip ratio {r} not in (0, 1]")));
                }
            }
            ClipPolicy::Search(grid) => {
                if grid.is_empty() {
                    return Err(Error::InvalidSpec("empty clip search grid".into()));
                }
                if grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                    return Err(Error::InvalidSpec("clip grid ratio not in (0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    /// Largest positive code magnitude for the symmetric uniform path.
    pub(crate) fn symmetric_qmax(&self) -> i64 {
        match self.signed_range {
            SignedRange::Full => (1i64 << self.bits) - 1,
            SignedRange::Balanced => (1i64 << (self.bits - 1)) - 1,
        }
    }

    /// Top of the unsigned code range for the asymmetric uniform path.
    pub(crate) fn asymmetric_qmax(&self) -> i64 {
        (1i64 << self.bits) - 1
    }

    pub(crate) fn round(&self, x: f64) -> f64 {
        match self.rounding {
            Rounding::HalfAwayFromZero => math::round_half_away(x),
            Rounding::HalfToEven => math::round_half_even(x),
        }
    }
}

/// Layout of quantization parameters over a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamAxis {
    /// One parameter set for the whole tensor.
    Full,
    /// One per row.
    Row,
    /// Groups of the given size along each row.
    GroupsAlongRow(usize),
}

impl ParamAxis {
    pub fn from_granularity(granularity: Granularity) -> ParamAxis {
        match granularity {
            Granularity::PerTensor => ParamAxis::Full,
            Granularity::PerRow => ParamAxis::Row,
            Granularity::PerGroup(g) => ParamAxis::GroupsAlongRow(g),
        }
    }

    pub(crate) fn group_count(&self, rows: usize, cols: usize) -> usize {
        match self {
            ParamAxis::Full => 1,
            ParamAxis::Row => rows,
            ParamAxis::GroupsAlongRow(g) => rows * cols.div_ceil(*g),
        }
    }

    pub(crate) fn group_of(&self, cols: usize, i: usize, j: usize) -> usize {
        match self {
            ParamAxis::Full => 0,
            ParamAxis::Row => i,
            ParamAxis::GroupsAlongRow(g) => i * cols.div_ceil(*g) + j / g,
        }
    }
}

/// Scales (and zero points when asymmetric) per quantization group.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub axis: ParamAxis,
    pub scales: Vec<f64>,
    /// Absent for symmetric quantizers.
    pub zero_points: Option<Vec<i64>>,
}

impl QuantParams {
    fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        let want = self.axis.group_count(rows, cols);
        if self.scales.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "params have {} scales, matrix needs {want}",
                self.scales.len()
            )));
        }
        if let Some(z) = &self.zero_points {
            if z.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "params have {} zero points, matrix needs {want}",
                    z.len()
                )));
            }
        }
        Ok(())
    }
}

/// Integer (or MXFP4 nibble) codes with the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<i64>,
    pub params: QuantParams,
    pub spec: QuantSpec,
}

impl QuantizedTensor {
    /// True when every code lies in the representable range of the spec.
    pub fn codes_in_range(&self) -> bool {
        match self.spec.format {
            QuantFormat::Mxfp4 => self.codes.iter().all(|c| (0..16).contains(c)),
            QuantFormat::UniformInt => {
                if self.spec.symmetric {
                    let q = self.spec.symmetric_qmax();
                    self.codes.iter().all(|c| (-q..=q).contains(c))
                } else {
                    let q = self.spec.asymmetric_qmax();
                    self.codes.iter().all(|c| (0..=q).contains(c))
                }
            }
        }
    }
}

/// Compute quantization parameters for `x` under `spec`, laid out along
/// `axis`. A `Search` clip policy is resolved here via [`clip_search`].
///
/// Degenerate all-zero groups get scale 1 (and zero point 0) so exact zeros
/// survive the round trip.
pub fn compute_params(x: &Matrix, spec: &QuantSpec, axis: ParamAxis) -> Result<QuantParams> {
    spec.validate()?;
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("compute_params"));
    }
    let ratio = match &spec.clip {
        ClipPolicy::Fixed(r) => *r,
        ClipPolicy::Search(grid) => clip_search(x, spec, grid)?,
    };
    match spec.format {
        QuantFormat::Mxfp4 => mxfp4::compute_mxfp4_params(x, axis, ratio),
        QuantFormat::UniformInt => uniform::compute_uniform_params(x, spec, axis, ratio),
    }
}

/// Quantize `x` to codes under `(spec, params)`.
pub fn quantize(x: &Matrix, spec: &QuantSpec, params: &QuantParams) -> Result<QuantizedTensor> {
    spec.validate()?;
    params.check_shape(x.rows(), x.cols())?;
    match spec.format {
        QuantFormat::Mxfp4 => mxfp4::quantize_codes(x, spec, params),
        QuantFormat::UniformInt => uniform::quantize_codes(x, spec, params),
    }
}

/// Decode a quantized tensor back to real values.
pub fn dequantize(q: &QuantizedTensor) -> Result<Matrix> {
    q.params.check_shape(q.rows, q.cols)?;
    match q.spec.format {
        QuantFormat::Mxfp4 => mxfp4::dequantize_codes(q),
        QuantFormat::UniformInt => uniform::dequantize_codes(q),
    }
}

/// Fake quantization: quantize then dequantize.
pub fn quantize_dequantize(x: &Matrix, spec: &QuantSpec, params: &QuantParams) -> Result<Matrix> {
    dequantize(&quantize(x, spec, params)?)
}

/// One-shot fake quantization with parameters derived from `x` itself at the
/// spec's own granularity.
pub fn fake_quantize(x: &Matrix, spec: &QuantSpec) -> Result<Matrix> {
    let axis = ParamAxis::from_granularity(spec.granularity);
    let params = compute_params(x, spec, axis)?;
    quantize_dequantize(x, spec, &params)
}

/// Resolve a spec's clip policy against a concrete tensor: fixed ratios pass
/// through, search policies run [`clip_search`].
pub fn resolve_clip(x: &Matrix, spec: &QuantSpec) -> Result<f64> {
    match &spec.clip {
        ClipPolicy::Fixed(r) => Ok(*r),
        ClipPolicy::Search(grid) => clip_search(x, spec, grid),
    }
}

/// Fake quantization with an already-resolved clip ratio.
pub fn fake_quantize_with_clip(x: &Matrix, spec: &QuantSpec, clip: f64) -> Result<Matrix> {
    let fixed = spec.clone().with_clip(ClipPolicy::Fixed(clip));
    fake_quantize(x, &fixed)
}

/// Linear search over `grid` for the clip ratio minimizing the squared
/// reconstruction error of fake-quantizing `x`. Ties break toward the larger
/// ratio.
pub fn clip_search(x: &Matrix, spec: &QuantSpec, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidSpec("empty clip search grid".into()));
    }
    let axis = ParamAxis::from_granularity(spec.granularity);
    let mut best_ratio = f64::NAN;
    let mut best_err = f64::INFINITY;
    for &r in grid {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "clip grid ratio {r} not in (0, 1]"
            )));
        }
        let candidate = spec.clone().with_clip(ClipPolicy::Fixed(r));
        let params = compute_params(x, &candidate, axis)?;
        let rec = quantize_dequantize(x, &candidate, &params)?;
        let err: f64 = rec
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if err < best_err || (err == best_err && r > best_ratio) {
            best_err = err;
            best_ratio = r;
        }
    }
    Ok(best_ratio)
}

/// Average extra bits per weight introduced by per-group quantization
/// parameters: `scale_storage_bits / g`, plus `bits / g` for the zero points
/// when asymmetric.
pub fn extra_bits_overhead(spec: &QuantSpec, scale_storage_bits: u32) -> Result<f64> {
    match spec.granularity {
        Granularity::PerGroup(g) if g > 0 => {
            let mut bits = scale_storage_bits as f64 / g as f64;
            if !spec.symmetric {
                bits += spec.bits as f64 / g as f64;
            }
            Ok(bits)
        }
        _ => Err(Error::InvalidSpec(
            "extra_bits_overhead requires per-group granularity".into(),
        )),
    }
}
