//! Recipe files: a TOML schema mirroring the core `Recipe`, with defaults
//! matching the standard setup (alpha 0.5, rank 32, gptq block 128, weight
//! clip search, MXFP4 activation clip 3/4). Unknown keys are rejected.

use serde::Deserialize;

use quantlab_core::linalg::Seed;
use quantlab_core::pipeline::{MitigationStep, Recipe};
use quantlab_core::quantizers::{
    ClipPolicy, Granularity, QuantFormat, QuantSpec, Rounding, SignedRange,
};
use quantlab_core::transforms::{RotationSource, ScaleSource, TransformRecipe, TransformStep};

use crate::error::CliError;

pub const RECIPE_VERSION: u32 = 1;

fn default_version() -> u32 {
    RECIPE_VERSION
}

fn default_alpha() -> f64 {
    0.5
}

fn default_opt_steps() -> usize {
    200
}

fn default_opt_lr() -> f64 {
    0.1
}

fn default_damping() -> f64 {
    0.01
}

fn default_gptq_block() -> usize {
    128
}

fn default_rank() -> usize {
    32
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeDoc {
    #[serde(default = "default_version")]
    version: u32,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    optimizer: OptimizerDoc,
    #[serde(default)]
    hessian: HessianDoc,
    #[serde(default)]
    transforms: Vec<TransformDoc>,
    #[serde(default)]
    weights: SpecDoc,
    #[serde(default)]
    activations: SpecDoc,
    #[serde(default)]
    mitigation: Vec<MitigationDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerDoc {
    #[serde(default = "default_opt_steps")]
    steps: usize,
    #[serde(default = "default_opt_lr")]
    lr: f64,
}

impl Default for OptimizerDoc {
    fn default() -> Self {
        Self {
            steps: default_opt_steps(),
            lr: default_opt_lr(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HessianDoc {
    #[serde(default = "default_damping")]
    damping: f64,
}

impl Default for HessianDoc {
    fn default() -> Self {
        Self {
            damping: default_damping(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
enum TransformDoc {
    Shift,
    Scale {
        #[serde(default)]
        source: Option<String>,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Rotation {
        #[serde(default)]
        source: Option<String>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
enum MitigationDoc {
    Gptq {
        #[serde(default = "default_gptq_block")]
        block: usize,
    },
    Lowrank {
        #[serde(default = "default_rank")]
        rank: usize,
    },
    ScaledLowrank {
        #[serde(default = "default_rank")]
        rank: usize,
    },
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq)]
#[serde(untagged)]
enum ClipDoc {
    Ratio(f64),
    Mode(ClipMode),
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "kebab-case")]
enum ClipMode {
    Search,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    bits: Option<u32>,
    #[serde(default)]
    symmetric: Option<bool>,
    #[serde(default)]
    granularity: Option<String>,
    #[serde(default)]
    group: Option<usize>,
    #[serde(default)]
    clip: Option<ClipDoc>,
    #[serde(default)]
    rounding: Option<String>,
    #[serde(default)]
    signed_range: Option<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum SpecRole {
    Weights,
    Activations,
}

impl SpecDoc {
    /// Resolve against the role defaults: weights are int4 symmetric
    /// per-row with clip search; activations are int4 asymmetric per-row
    /// unclipped (MXFP4 activations clip at 3/4).
    fn to_spec(&self, role: SpecRole) -> Result<QuantSpec, CliError> {
        let format = match self.format.as_deref() {
            None | Some("int") | Some("uniform-int") => QuantFormat::UniformInt,
            Some("mxfp4") => QuantFormat::Mxfp4,
            Some(other) => {
                return Err(CliError::validation(format!(
                    "format: unknown value '{other}' (expected 'int' or 'mxfp4')"
                )))
            }
        };
        let mut spec = match format {
            QuantFormat::UniformInt => QuantSpec::uniform(self.bits.unwrap_or(4)),
            QuantFormat::Mxfp4 => {
                if let Some(bits) = self.bits {
                    if bits != 4 {
                        return Err(CliError::validation(format!(
                            "bits: mxfp4 is 4-bit, got {bits}"
                        )));
                    }
                }
                QuantSpec::mxfp4()
            }
        };

        if let Some(sym) = self.symmetric {
            spec = spec.with_symmetric(sym);
        } else if role == SpecRole::Activations && format == QuantFormat::UniformInt {
            spec = spec.with_symmetric(false);
        }

        match (self.granularity.as_deref(), format) {
            (None, QuantFormat::UniformInt) => {}
            (None, QuantFormat::Mxfp4) => {}
            (Some("per-tensor"), _) => spec = spec.with_granularity(Granularity::PerTensor),
            (Some("per-row"), _) | (Some("per-channel"), _) | (Some("per-token"), _) => {
                spec = spec.with_granularity(Granularity::PerRow)
            }
            (Some("per-group"), _) => {
                let g = self.group.ok_or_else(|| {
                    CliError::validation("granularity: per-group requires a 'group' size")
                })?;
                spec = spec.with_granularity(Granularity::PerGroup(g));
            }
            (Some(other), _) => {
                return Err(CliError::validation(format!(
                    "granularity: unknown value '{other}'"
                )))
            }
        }
        if self.granularity.as_deref() != Some("per-group") && self.group.is_some() {
            return Err(CliError::validation(
                "group: only valid with granularity = 'per-group'",
            ));
        }

        let clip = match self.clip {
            Some(ClipDoc::Ratio(r)) => ClipPolicy::Fixed(r),
            Some(ClipDoc::Mode(ClipMode::Search)) => ClipPolicy::default_search(),
            None => match role {
                SpecRole::Weights => ClipPolicy::default_search(),
                SpecRole::Activations => match format {
                    QuantFormat::Mxfp4 => ClipPolicy::Fixed(0.75),
                    QuantFormat::UniformInt => ClipPolicy::Fixed(1.0),
                },
            },
        };
        spec = spec.with_clip(clip);

        match self.rounding.as_deref() {
            None => {}
            Some("half-away-from-zero") => spec = spec.with_rounding(Rounding::HalfAwayFromZero),
            Some("half-to-even") => spec = spec.with_rounding(Rounding::HalfToEven),
            Some(other) => {
                return Err(CliError::validation(format!(
                    "rounding: unknown value '{other}'"
                )))
            }
        }
        match self.signed_range.as_deref() {
            None => {}
            Some("balanced") => spec = spec.with_signed_range(SignedRange::Balanced),
            Some("full") => spec = spec.with_signed_range(SignedRange::Full),
            Some(other) => {
                return Err(CliError::validation(format!(
                    "signed_range: unknown value '{other}'"
                )))
            }
        }
        spec.validate()
            .map_err(|e| CliError::validation(e.to_string()))?;
        Ok(spec)
    }
}

fn transform_step(doc: &TransformDoc, recipe_seed: u64) -> Result<TransformStep, CliError> {
    Ok(match doc {
        TransformDoc::Shift => TransformStep::Shift,
        TransformDoc::Scale { source, alpha } => match source.as_deref() {
            None | Some("calibrated") => {
                TransformStep::Scale(ScaleSource::Calibrated { alpha: *alpha })
            }
            Some("optimized") => TransformStep::Scale(ScaleSource::Optimized),
            Some(other) => {
                return Err(CliError::validation(format!(
                    "transforms.source: unknown scale source '{other}'"
                )))
            }
        },
        TransformDoc::Rotation { source, seed } => match source.as_deref() {
            None | Some("hadamard") => TransformStep::Rotation(RotationSource::Hadamard),
            Some("random") => TransformStep::Rotation(RotationSource::Random {
                seed: Seed(seed.unwrap_or(recipe_seed)),
            }),
            Some("optimized") => TransformStep::Rotation(RotationSource::Optimized),
            Some(other) => {
                return Err(CliError::validation(format!(
                    "transforms.source: unknown rotation source '{other}'"
                )))
            }
        },
    })
}

/// Parse a recipe document and resolve it into a validated core recipe.
pub fn parse_recipe(text: &str) -> Result<Recipe, CliError> {
    let doc: RecipeDoc =
        toml::from_str(text).map_err(|e| CliError::validation(format!("recipe: {e}")))?;
    if doc.version != RECIPE_VERSION {
        return Err(CliError::validation(format!(
            "unsupported recipe version {}",
            doc.version
        )));
    }
    let steps = doc
        .transforms
        .iter()
        .map(|t| transform_step(t, doc.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mitigation = doc
        .mitigation
        .iter()
        .map(|m| match m {
            MitigationDoc::Gptq { block } => MitigationStep::Gptq { block: *block },
            MitigationDoc::Lowrank { rank } => MitigationStep::LowRank { rank: *rank },
            MitigationDoc::ScaledLowrank { rank } => MitigationStep::ScaledLowRank { rank: *rank },
        })
        .collect();

    let recipe = Recipe {
        transforms: TransformRecipe::new(steps),
        w_spec: doc.weights.to_spec(SpecRole::Weights)?,
        a_spec: doc.activations.to_spec(SpecRole::Activations)?,
        mitigation,
        seed: Seed(doc.seed),
        opt_steps: doc.optimizer.steps,
        opt_lr: doc.optimizer.lr,
        hessian_damping: doc.hessian.damping,
    };
    recipe
        .validate()
        .map_err(|e| CliError::validation(e.to_string()))?;
    Ok(recipe)
}

pub fn load_recipe(path: &std::path::Path) -> Result<Recipe, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
    parse_recipe(&text)
}
