//! Recipe execution: per layer, calibrate and apply transforms on the
//! training split, quantize weights (with mitigation) and activations, and
//! score against the full-precision output on the held-out split.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::{hadamard, random_orthogonal, Matrix};
use crate::mitigation::{
    activation_scale_vector, build_hessian, gptq_quantize, layer_output, lowrank_compensate,
    rtn_quantize, scaled_lowrank_compensate, LowRankBranch, MitigationResult,
};
use crate::quantizers::{fake_quantize_with_clip, resolve_clip, QuantFormat};
use crate::transforms::{
    apply_rotation, apply_scale, apply_shift, calibrate_scale, calibrate_shift, optimize_rotation,
    optimize_scale, AppliedTransform, RotationMatrix, RotationSource, ScaleSource, TransformStep,
};
use crate::{Error, Result};

use super::{
    flatness_metrics, AggregateMetrics, LayerBundle, LayerMetrics, MitigationStep, ModelBundle,
    Recipe, Report, REPORT_FORMAT_VERSION,
};

/// Everything a run produced for one layer, for inspection dumps.
#[derive(Debug, Clone)]
pub struct LayerArtifacts {
    pub name: String,
    /// Resolved transform parameters in application order.
    pub applied: Vec<AppliedTransform>,
    /// Dequantized effective weights (C_in x C_out), branch not included.
    pub w_q_dequant: Matrix,
    pub branch: Option<LowRankBranch>,
    pub result: MitigationResult,
}

/// Last quarter of the calibration tokens is held out for metrics; the rest
/// calibrates and optimizes.
fn train_rows(tokens: usize) -> Result<usize> {
    if tokens < 2 {
        return Err(Error::EmptyInput(
            "layer needs at least 2 calibration tokens (train + held-out)",
        ));
    }
    let eval = (tokens / 4).max(1);
    Ok(tokens - eval)
}

struct LayerRun {
    metrics: LayerMetrics,
    artifacts: LayerArtifacts,
    warnings: Vec<String>,
}

fn run_layer(layer: &LayerBundle, recipe: &Recipe) -> Result<LayerRun> {
    let name = layer.name.clone();
    let stage = |e: Error, s: &'static str| e.at_layer(&name, s);

    let tokens = layer.tokens();
    let split = train_rows(tokens).map_err(|e| stage(e, "split"))?;

    // Full-precision reference on the held-out split of the original layer.
    let x_eval_orig = layer.calib.slice_rows(split, tokens)?;
    let y_ref = layer
        .output_for(&x_eval_orig)
        .map_err(|e| stage(e, "reference"))?;
    let signal = {
        let n = y_ref.frob_norm();
        (n * n).max(1e-300)
    };

    // Transform stage: calibrate on the training split, apply to the whole
    // bundle so the held-out rows stay consistent.
    let mut current = layer.clone();
    let mut applied = Vec::new();
    let mut warnings = Vec::new();
    for step in &recipe.transforms.steps {
        let train = current.calib.slice_rows(0, split)?;
        match step {
            TransformStep::Shift => {
                let t = calibrate_shift(&train).map_err(|e| stage(e, "shift"))?;
                current = apply_shift(&current, &t).map_err(|e| stage(e, "shift"))?;
                applied.push(AppliedTransform::Shift(t));
            }
            TransformStep::Scale(source) => {
                let s = match source {
                    ScaleSource::Calibrated { alpha } => {
                        let cal = calibrate_scale(&train, &current.w, *alpha)
                            .map_err(|e| stage(e, "scale"))?;
                        if !cal.fallback_channels.is_empty() {
                            warnings.push(format!(
                                "layer '{name}': {} zero-max channel(s) fell back to s=1 in scale calibration",
                                cal.fallback_channels.len()
                            ));
                        }
                        cal.scale
                    }
                    ScaleSource::Optimized => {
                        let train_layer = current.with_calib(train.clone())?;
                        optimize_scale(
                            &train_layer,
                            &recipe.w_spec,
                            &recipe.a_spec,
                            recipe.opt_steps,
                            recipe.opt_lr,
                        )
                        .map_err(|e| stage(e, "scale"))?
                    }
                };
                current = apply_scale(&current, &s).map_err(|e| stage(e, "scale"))?;
                applied.push(AppliedTransform::Scale(s));
            }
            TransformStep::Rotation(source) => {
                let o = match source {
                    RotationSource::Hadamard => RotationMatrix::new(
                        hadamard(current.c_in()).map_err(|e| stage(e, "rotation"))?,
                    )
                    .map_err(|e| stage(e, "rotation"))?,
                    RotationSource::Random { seed } => RotationMatrix::new(
                        random_orthogonal(current.c_in(), *seed)
                            .map_err(|e| stage(e, "rotation"))?,
                    )
                    .map_err(|e| stage(e, "rotation"))?,
                    RotationSource::Optimized => {
                        let train_layer = current.with_calib(train.clone())?;
                        optimize_rotation(
                            &train_layer,
                            &recipe.w_spec,
                            &recipe.a_spec,
                            recipe.opt_steps,
                            recipe.opt_lr,
                            recipe.seed,
                        )
                        .map_err(|e| stage(e, "rotation"))?
                    }
                };
                current = apply_rotation(&current, &o).map_err(|e| stage(e, "rotation"))?;
                applied.push(AppliedTransform::Rotation(o));
            }
        }
    }

    // Hessian from the transformed training split.
    let x_train = current.calib.slice_rows(0, split)?;
    let hessian =
        build_hessian(&x_train, recipe.hessian_damping).map_err(|e| stage(e, "hessian"))?;

    // Weight quantization, with feedback compensation when requested.
    let mut result = match recipe.gptq_block() {
        Some(block) => gptq_quantize(&current.w, &hessian, &recipe.w_spec, block)
            .map_err(|e| stage(e, "weight-quant"))?,
        None => rtn_quantize(&current.w, &hessian, &recipe.w_spec)
            .map_err(|e| stage(e, "weight-quant"))?,
    };
    let w_q_dequant = result
        .dequantized_weights()
        .map_err(|e| stage(e, "weight-quant"))?;

    // Optional low-rank branch on the remaining weight error.
    for step in &recipe.mitigation {
        match step {
            MitigationStep::Gptq { .. } => {}
            MitigationStep::LowRank { rank } => {
                let br = lowrank_compensate(&current.w, &w_q_dequant, *rank)
                    .map_err(|e| stage(e, "lowrank"))?;
                result.branch = Some(br);
            }
            MitigationStep::ScaledLowRank { rank } => {
                let s = activation_scale_vector(&x_train).map_err(|e| stage(e, "lowrank"))?;
                let br = scaled_lowrank_compensate(&current.w, &w_q_dequant, *rank, &s)
                    .map_err(|e| stage(e, "lowrank"))?;
                result.branch = Some(br);
            }
        }
    }

    // Activation fake-quant on the held-out split. Per-token parameters are
    // dynamic; a clip search resolves on the training split only.
    let x_eval = current.calib.slice_rows(split, tokens)?;
    let a_clip =
        resolve_clip(&x_train, &recipe.a_spec).map_err(|e| stage(e, "activation-quant"))?;
    let x_eval_q = fake_quantize_with_clip(&x_eval, &recipe.a_spec, a_clip)
        .map_err(|e| stage(e, "activation-quant"))?;

    let y_hat = layer_output(
        &x_eval_q,
        &w_q_dequant,
        result.branch.as_ref(),
        current.bias.as_deref(),
    )
    .map_err(|e| stage(e, "metrics"))?;

    // Metrics.
    let output_mse = {
        let d = y_hat.frob_dist(&y_ref).map_err(|e| stage(e, "metrics"))?;
        d * d / signal
    };
    let weight_frob_err = {
        let effective = match &result.branch {
            Some(br) => w_q_dequant.add(&br.dense()?)?,
            None => w_q_dequant.clone(),
        };
        let norm = current.w.frob_norm().max(1e-300);
        current.w.frob_dist(&effective)? / norm
    };
    let flat = flatness_metrics(&x_eval).map_err(|e| stage(e, "metrics"))?;
    let bits_per_weight = {
        let scale_bits: f64 = match recipe.w_spec.format {
            QuantFormat::Mxfp4 => 8.0,
            QuantFormat::UniformInt => 16.0,
        };
        let n_weights = (result.w_q.rows * result.w_q.cols) as f64;
        let mut bits = scale_bits * result.w_q.params.scales.len() as f64;
        if let Some(z) = &result.w_q.params.zero_points {
            bits += recipe.w_spec.bits as f64 * z.len() as f64;
        }
        bits / n_weights
    };

    Ok(LayerRun {
        metrics: LayerMetrics {
            name: name.clone(),
            weight_frob_err,
            output_mse,
            proxy_loss: result.proxy_loss,
            flatness_max_over_mean: flat.max_over_mean,
            kurtosis: flat.kurtosis,
            bits_per_weight,
        },
        artifacts: LayerArtifacts {
            name,
            applied,
            w_q_dequant,
            branch: result.branch.clone(),
            result,
        },
        warnings,
    })
}

/// Run a recipe over a model, returning the report only.
pub fn run_recipe(model: &ModelBundle, recipe: &Recipe) -> Result<Report> {
    Ok(run_recipe_detailed(model, recipe)?.0)
}

/// Run a recipe and also return the per-layer artifacts (transform
/// parameters, quantized weights, branch factors).
pub fn run_recipe_detailed(
    model: &ModelBundle,
    recipe: &Recipe,
) -> Result<(Report, Vec<LayerArtifacts>)> {
    recipe.validate()?;
    let mut warnings = Vec::new();
    if recipe.transforms.has_shift() && recipe.a_spec.symmetric {
        warnings.push(String::from(
            "recipe pairs shift with symmetric activation quantization; \
             shift exists to remove activation asymmetry",
        ));
    }

    let mut layers = Vec::with_capacity(model.layers.len());
    let mut artifacts = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let run = run_layer(layer, recipe)?;
        warnings.extend(run.warnings);
        layers.push(run.metrics);
        artifacts.push(run.artifacts);
    }

    let n = layers.len().max(1) as f64;
    let mean = |f: fn(&LayerMetrics) -> f64| layers.iter().map(f).sum::<f64>() / n;
    let aggregate = AggregateMetrics {
        weight_frob_err: mean(|m| m.weight_frob_err),
        output_mse: mean(|m| m.output_mse),
        proxy_loss: mean(|m| m.proxy_loss),
        flatness_max_over_mean: mean(|m| m.flatness_max_over_mean),
        kurtosis: mean(|m| m.kurtosis),
        bits_per_weight: mean(|m| m.bits_per_weight),
    };
    Ok((
        Report {
            version: REPORT_FORMAT_VERSION,
            recipe: alloc::format!("{recipe}"),
            layers,
            aggregate,
            warnings,
        },
        artifacts,
    ))
}
