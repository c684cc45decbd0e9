//! End-to-end recipes over model bundles: synthetic calibration data, recipe
//! execution with held-out evaluation, report metrics, and configuration
//! sweeps.

mod bundle;
mod run;
mod sweep;
mod synth;

pub use bundle::{LayerBundle, ModelBundle};
pub use run::{run_recipe, run_recipe_detailed, LayerArtifacts};
pub use sweep::{sweep, FormatChoice, SweepAxis, SweepReport, SweepRow};
pub use synth::{gen_synthetic_model, SynthConfig};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{Matrix, Seed};
use crate::math;
use crate::quantizers::{ClipPolicy, Granularity, QuantFormat, QuantSpec, Rounding, SignedRange};
use crate::transforms::{
    DiffObjective, RotationSource, ScaleSource, TransformRecipe, TransformStep,
};
use crate::{Error, Result};

/// Report format version embedded in serialized reports.
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// One quantization-error-mitigation stage.
#[derive(Debug, Clone, PartialEq)]
pub enum MitigationStep {
    Gptq { block: usize },
    LowRank { rank: usize },
    ScaledLowRank { rank: usize },
}

/// A full quantization recipe: transforms, weight/activation quantizers,
/// mitigation stages, and the optimizer hyperparameters shared by all
/// optimized transform steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub transforms: TransformRecipe,
    pub w_spec: QuantSpec,
    pub a_spec: QuantSpec,
    pub mitigation: Vec<MitigationStep>,
    pub seed: Seed,
    pub opt_steps: usize,
    pub opt_lr: f64,
    pub hessian_damping: f64,
}

impl Recipe {
    /// W4A4 uniform-int baseline: symmetric per-row weights with clip
    /// search, asymmetric per-row (per-token) activations, no transforms,
    /// no mitigation.
    pub fn w4a4_int() -> Recipe {
        Recipe {
            transforms: TransformRecipe::default(),
            w_spec: QuantSpec::uniform(4).with_clip(ClipPolicy::default_search()),
            a_spec: QuantSpec::uniform(4).with_symmetric(false),
            mitigation: Vec::new(),
            seed: Seed(0),
            opt_steps: 200,
            opt_lr: 0.1,
            hessian_damping: 0.01,
        }
    }

    /// W4A4 MXFP4 baseline: group-32 E8M0 scales, weight clip search,
    /// activation clip 3/4.
    pub fn w4a4_mxfp4() -> Recipe {
        Recipe {
            transforms: TransformRecipe::default(),
            w_spec: QuantSpec::mxfp4().with_clip(ClipPolicy::default_search()),
            a_spec: QuantSpec::mxfp4().with_clip(ClipPolicy::Fixed(0.75)),
            mitigation: Vec::new(),
            seed: Seed(0),
            opt_steps: 200,
            opt_lr: 0.1,
            hessian_damping: 0.01,
        }
    }

    pub fn with_transforms(mut self, transforms: TransformRecipe) -> Recipe {
        self.transforms = transforms;
        self
    }

    pub fn with_mitigation(mut self, mitigation: Vec<MitigationStep>) -> Recipe {
        self.mitigation = mitigation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.transforms.validate()?;
        self.w_spec.validate()?;
        self.a_spec.validate()?;
        if self.opt_lr.is_nan() || self.opt_lr <= 0.0 || !self.opt_lr.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "optimizer learning rate must be positive, got {}",
                self.opt_lr
            )));
        }
        if self.hessian_damping.is_nan()
            || self.hessian_damping < 0.0
            || !self.hessian_damping.is_finite()
        {
            return Err(Error::InvalidSpec(format!(
                "hessian damping must be >= 0, got {}",
                self.hessian_damping
            )));
        }
        let mut gptq_seen = 0usize;
        let mut branch_seen = 0usize;
        for step in &self.mitigation {
            match step {
                MitigationStep::Gptq { block } => {
                    gptq_seen += 1;
                    if branch_seen > 0 {
                        return Err(Error::InvalidSpec(
                            "gptq must precede the low-rank stage".into(),
                        ));
                    }
                    if *block == 0 {
                        return Err(Error::InvalidSpec("gptq block must be >= 1".into()));
                    }
                }
                MitigationStep::LowRank { rank } | MitigationStep::ScaledLowRank { rank } => {
                    branch_seen += 1;
                    if *rank == 0 {
                        return Err(Error::InvalidSpec("low-rank rank must be >= 1".into()));
                    }
                }
            }
        }
        if gptq_seen > 1 {
            return Err(Error::InvalidSpec("at most one gptq stage".into()));
        }
        if branch_seen > 1 {
            return Err(Error::InvalidSpec(
                "at most one of lowrank/scaled-lowrank".into(),
            ));
        }
        Ok(())
    }

    /// Block size of the gptq stage, if present.
    pub fn gptq_block(&self) -> Option<usize> {
        self.mitigation.iter().find_map(|m| match m {
            MitigationStep::Gptq { block } => Some(*block),
            _ => None,
        })
    }
}

fn fmt_clip(clip: &ClipPolicy, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match clip {
        ClipPolicy::Fixed(r) => write!(f, "clip={r}"),
        ClipPolicy::Search(_) => write!(f, "clip=search"),
    }
}

impl fmt::Display for QuantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.format {
            QuantFormat::Mxfp4 => write!(f, "mxfp4 ")?,
            QuantFormat::UniformInt => write!(f, "int{} ", self.bits)?,
        }
        write!(f, "{} ", if self.symmetric { "sym" } else { "asym" })?;
        match self.granularity {
            Granularity::PerTensor => write!(f, "per-tensor ")?,
            Granularity::PerRow => write!(f, "per-row ")?,
            Granularity::PerGroup(g) => write!(f, "per-group({g}) ")?,
        }
        fmt_clip(&self.clip, f)?;
        if self.format == QuantFormat::UniformInt {
            let rnd = match self.rounding {
                Rounding::HalfAwayFromZero => "half-away",
                Rounding::HalfToEven => "half-even",
            };
            let range = match self.signed_range {
                SignedRange::Full => "full",
                SignedRange::Balanced => "balanced",
            };
            write!(f, " rnd={rnd} range={range}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "transforms=[")?;
        for (i, step) in self.transforms.steps.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match step {
                TransformStep::Shift => write!(f, "shift")?,
                TransformStep::Scale(ScaleSource::Calibrated { alpha }) => {
                    write!(f, "scale(alpha={alpha})")?
                }
                TransformStep::Scale(ScaleSource::Optimized) => write!(f, "scale(optimized)")?,
                TransformStep::Rotation(RotationSource::Hadamard) => {
                    write!(f, "rotation(hadamard)")?
                }
                TransformStep::Rotation(RotationSource::Random { seed }) => {
                    write!(f, "rotation(random:{})", seed.0)?
                }
                TransformStep::Rotation(RotationSource::Optimized) => {
                    write!(f, "rotation(optimized)")?
                }
            }
        }
        write!(
            f,
            "] weights={{{}}} activations={{{}}} mitigation=[",
            self.w_spec, self.a_spec
        )?;
        for (i, step) in self.mitigation.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match step {
                MitigationStep::Gptq { block } => write!(f, "gptq(block={block})")?,
                MitigationStep::LowRank { rank } => write!(f, "lowrank(k={rank})")?,
                MitigationStep::ScaledLowRank { rank } => write!(f, "scaled-lowrank(k={rank})")?,
            }
        }
        write!(
            f,
            "] seed={} opt_steps={} opt_lr={} damping={}",
            self.seed.0, self.opt_steps, self.opt_lr, self.hessian_damping
        )
    }
}

/// Per-layer error metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMetrics {
    pub name: String,
    /// `||W - W_eff||_F / ||W||_F` with the branch folded in, on the
    /// transformed weights.
    pub weight_frob_err: f64,
    /// Output MSE normalized by full-precision output power.
    pub output_mse: f64,
    /// Quadratic proxy `sum_rows delta H delta^T`.
    pub proxy_loss: f64,
    pub flatness_max_over_mean: f64,
    pub kurtosis: f64,
    /// Quantization-parameter storage overhead actually incurred.
    pub bits_per_weight: f64,
}

/// Means of the per-layer metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub weight_frob_err: f64,
    pub output_mse: f64,
    pub proxy_loss: f64,
    pub flatness_max_over_mean: f64,
    pub kurtosis: f64,
    pub bits_per_weight: f64,
}

/// Result of running one recipe over one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub version: u32,
    pub recipe: String,
    pub layers: Vec<LayerMetrics>,
    pub aggregate: AggregateMetrics,
    pub warnings: Vec<String>,
}

/// Flatness statistics of a tensor's entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatnessMetrics {
    pub max_over_mean: f64,
    pub kurtosis: f64,
}

/// `max|x| / mean|x|` and excess kurtosis over the flattened entries.
/// All-zero input reports 0 for both by convention.
pub fn flatness_metrics(x: &Matrix) -> Result<FlatnessMetrics> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("flatness_metrics"));
    }
    let n = x.data().len() as f64;
    let max_abs = x.max_abs();
    let mean_abs = x.data().iter().map(|v| math::abs(*v)).sum::<f64>() / n;
    let max_over_mean = if mean_abs == 0.0 {
        0.0
    } else {
        max_abs / mean_abs
    };

    let mean = x.data().iter().sum::<f64>() / n;
    let m2 = x
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let kurtosis = if m2 == 0.0 {
        0.0
    } else {
        let m4 = x
            .data()
            .iter()
            .map(|v| {
                let d = v - mean;
                d * d * d * d
            })
            .sum::<f64>()
            / n;
        m4 / (m2 * m2) - 3.0
    };
    Ok(FlatnessMetrics {
        max_over_mean,
        kurtosis,
    })
}

/// Maximum relative disagreement between an objective's analytic gradient
/// and central finite differences at `params`.
///
/// The per-component denominator is floored at 1e-3 of the gradient's
/// largest entry: components that many orders below the gradient scale sit
/// at the f64 cancellation floor of the difference quotient, where a plain
/// relative comparison only measures noise. A gradient that is zero
/// throughout is compared absolutely.
pub fn finite_difference_check(
    obj: &dyn DiffObjective,
    params: &[f64],
    epsilon: f64,
) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if params.len() != obj.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters for an objective of dimension {}",
            params.len(),
            obj.dim()
        )));
    }
    let analytic = obj.gradient(params)?;
    let mut fd = alloc::vec![0.0; params.len()];
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        probe[i] = params[i] + epsilon;
        let up = obj.value(&probe)?;
        probe[i] = params[i] - epsilon;
        let down = obj.value(&probe)?;
        probe[i] = params[i];
        fd[i] = (up - down) / (2.0 * epsilon);
    }
    let gscale = analytic
        .iter()
        .chain(fd.iter())
        .fold(0.0f64, |m, v| m.max(math::abs(*v)));
    let floor = (1e-3 * gscale).max(1e-12);
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let denom = math::abs(fd[i]).max(math::abs(analytic[i])).max(floor);
        worst = worst.max(math::abs(fd[i] - analytic[i]) / denom);
    }
    Ok(worst)
}
