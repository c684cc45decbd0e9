//! Pre-quantization transformations: shifting, scaling, rotation, and their
//! locally optimized variants.
//!
//! Every transform is an exact reparameterization of the layer: the
//! full-precision output `x w + bias` is preserved (up to float noise), while
//! the tensors handed to the quantizer become flatter.

mod optimize;

pub use optimize::{
    optimize_rotation, optimize_scale, DiffObjective, RotationObjective, ScaleObjective,
};

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::{orthogonality_error, Matrix, Seed};
use crate::math;
use crate::pipeline::LayerBundle;
use crate::{Error, Result};

/// Per-input-channel offsets subtracted from the activations; the product
/// `t^T w` folds into the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftVector(Vec<f64>);

impl ShiftVector {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("shift vector"));
        }
        Ok(Self(t))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-input-channel positive factors: activations divide by them, weight
/// rows multiply by them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVector(Vec<f64>);

impl ScaleVector {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if !s.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidArgument(
                "scale vector entries must be finite and positive".into(),
            ));
        }
        Ok(Self(s))
    }

    pub fn ones(n: usize) -> Self {
        Self(alloc::vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entrywise reciprocal (still positive, so always valid).
    pub fn reciprocal(&self) -> ScaleVector {
        ScaleVector(self.0.iter().map(|s| 1.0 / s).collect())
    }
}

/// An orthogonal matrix applied as `x o` / `o^T w`. Construction enforces
/// `||O^T O - I||_F < 1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix(Matrix);

impl RotationMatrix {
    pub fn new(o: Matrix) -> Result<Self> {
        if o.rows() != o.cols() {
            return Err(Error::ShapeMismatch(format!(
                "rotation must be square, got {}x{}",
                o.rows(),
                o.cols()
            )));
        }
        let err = orthogonality_error(&o);
        if err >= 1e-8 {
            return Err(Error::NotOrthogonal { deviation: err });
        }
        Ok(Self(o))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    /// The inverse rotation (transpose).
    pub fn inverse(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }
}

/// Where a scale step gets its factors from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleSource {
    /// Migration-strength calibration with the given alpha.
    Calibrated { alpha: f64 },
    /// Gradient-descent refinement starting from the alpha = 0.5 calibration.
    Optimized,
}

/// Where a rotation step gets its matrix from.
#[derive(Debug, Clone, PartialEq)]
pub enum RotationSource {
    Hadamard,
    Random {
        seed: Seed,
    },
    /// Cayley-parameterized gradient descent from the Hadamard (or seeded
    /// random, for non-power-of-two dims) starting point.
    Optimized,
}

/// One step of a transform recipe.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformStep {
    Shift,
    Scale(ScaleSource),
    Rotation(RotationSource),
}

/// Ordered list of transform steps. Order is significant and caller-chosen;
/// the conventional order is shift, then scale, then rotation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformRecipe {
    pub steps: Vec<TransformStep>,
}

impl TransformRecipe {
    pub fn new(steps: Vec<TransformStep>) -> Self {
        Self { steps }
    }

    pub fn validate(&self) -> Result<()> {
        let shifts = self
            .steps
            .iter()
            .filter(|s| matches!(s, TransformStep::Shift))
            .count();
        if shifts > 1 {
            return Err(Error::InvalidSpec(format!(
                "at most one shift step allowed, found {shifts}"
            )));
        }
        for step in &self.steps {
            if let TransformStep::Scale(ScaleSource::Calibrated { alpha }) = step {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::InvalidSpec(format!("alpha {alpha} not in [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn has_shift(&self) -> bool {
        self.steps.iter().any(|s| matches!(s, TransformStep::Shift))
    }
}

/// The concrete parameters a recipe step resolved to, kept for inversion and
/// for dumping.
#[derive(Debug, Clone, PartialEq)]
pub enum AppliedTransform {
    Shift(ShiftVector),
    Scale(ScaleVector),
    Rotation(RotationMatrix),
}

impl AppliedTransform {
    /// Apply the inverse of this transform, restoring the pre-transform
    /// layer (up to float noise).
    pub fn apply_inverse(&self, layer: &LayerBundle) -> Result<LayerBundle> {
        match self {
            AppliedTransform::Shift(t) => {
                let neg = ShiftVector::new(t.values().iter().map(|v| -v).collect())?;
                apply_shift(layer, &neg)
            }
            AppliedTransform::Scale(s) => apply_scale(layer, &s.reciprocal()),
            AppliedTransform::Rotation(o) => apply_rotation(layer, &o.inverse()),
        }
    }
}

/// Per-channel shift calibration: the midpoint of each channel's range.
pub fn calibrate_shift(x: &Matrix) -> Result<ShiftVector> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("calibrate_shift"));
    }
    let mut t = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..x.rows() {
            let v = x[(i, j)];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        t.push((lo + hi) / 2.0);
    }
    ShiftVector::new(t)
}

/// Shift the activations by `-t` and absorb `t^T w` into the bias, so the
/// layer output is unchanged.
pub fn apply_shift(layer: &LayerBundle, t: &ShiftVector) -> Result<LayerBundle> {
    let c_in = layer.c_in();
    if t.len() != c_in {
        return Err(Error::ShapeMismatch(format!(
            "shift length {} vs {} input channels",
            t.len(),
            c_in
        )));
    }
    let mut calib = layer.calib.clone();
    for i in 0..calib.rows() {
        let row = calib.row_mut(i);
        for (j, tj) in t.values().iter().enumerate() {
            row[j] -= tj;
        }
    }
    // bias' = t^T w + bias.
    let t_row = Matrix::new(1, c_in, t.values().to_vec())?;
    let tw = t_row.matmul(&layer.w)?;
    let mut bias: Vec<f64> = layer
        .bias
        .clone()
        .unwrap_or_else(|| alloc::vec![0.0; layer.c_out()]);
    for (j, b) in bias.iter_mut().enumerate() {
        *b += tw[(0, j)];
    }
    LayerBundle::new(layer.name.clone(), layer.w.clone(), Some(bias), calib)
}

/// Result of scale calibration; channels whose max was zero fall back to
/// s = 1 and are reported so callers can flag them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleCalibration {
    pub scale: ScaleVector,
    pub fallback_channels: Vec<usize>,
}

/// Migration-strength calibration: `s_j = max|X_j|^alpha / max|W_j|^(1-alpha)`.
/// At alpha = 0.5 the post-transform channel maxima of activations and
/// weights are equal.
pub fn calibrate_scale(x: &Matrix, w: &Matrix, alpha: f64) -> Result<ScaleCalibration> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} not in [0, 1]"
        )));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("calibrate_scale"));
    }
    if x.cols() != w.rows() {
        return Err(Error::ShapeMismatch(format!(
            "activations have {} channels, weights expect {}",
            x.cols(),
            w.rows()
        )));
    }
    let mut s = Vec::with_capacity(x.cols());
    let mut fallback = Vec::new();
    for j in 0..x.cols() {
        let mut ax = 0.0f64;
        for i in 0..x.rows() {
            ax = ax.max(math::abs(x[(i, j)]));
        }
        let aw = w.row(j).iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
        if ax == 0.0 || aw == 0.0 {
            fallback.push(j);
            s.push(1.0);
        } else {
            s.push(math::powf(ax, alpha) / math::powf(aw, 1.0 - alpha));
        }
    }
    Ok(ScaleCalibration {
        scale: ScaleVector::new(s)?,
        fallback_channels: fallback,
    })
}

/// Divide activation channels by `s` and multiply the matching weight rows,
/// leaving the layer output unchanged.
pub fn apply_scale(layer: &LayerBundle, s: &ScaleVector) -> Result<LayerBundle> {
    let c_in = layer.c_in();
    if s.len() != c_in {
        return Err(Error::ShapeMismatch(format!(
            "scale length {} vs {} input channels",
            s.len(),
            c_in
        )));
    }
    let mut calib = layer.calib.clone();
    for i in 0..calib.rows() {
        let row = calib.row_mut(i);
        for (j, sj) in s.values().iter().enumerate() {
            row[j] /= sj;
        }
    }
    let mut w = layer.w.clone();
    for (j, sj) in s.values().iter().enumerate() {
        for v in w.row_mut(j) {
            *v *= sj;
        }
    }
    LayerBundle::new(layer.name.clone(), w, layer.bias.clone(), calib)
}

/// Rotate activations (`x o`) and counter-rotate weights (`o^T w`), leaving
/// the layer output unchanged.
pub fn apply_rotation(layer: &LayerBundle, o: &RotationMatrix) -> Result<LayerBundle> {
    if o.dim() != layer.c_in() {
        return Err(Error::ShapeMismatch(format!(
            "rotation is {}x{}, layer has {} input channels",
            o.dim(),
            o.dim(),
            layer.c_in()
        )));
    }
    let calib = layer.calib.matmul(o.matrix())?;
    let w = o.matrix().transpose().matmul(&layer.w)?;
    LayerBundle::new(layer.name.clone(), w, layer.bias.clone(), calib)
}
