//! Synthetic model generation with planted activation outliers.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::{Matrix, Seed, SplitMix64};
use crate::math;
use crate::{Error, Result};

use super::{LayerBundle, ModelBundle};

/// Parameters for [`gen_synthetic_model`]. `dims` cycles over the layers;
/// each layer is square (`C_in = C_out = dims[i % len]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub layers: usize,
    pub dims: Vec<usize>,
    pub tokens: usize,
    /// Number of channels multiplied by `outlier_gain` and shifted by `skew`.
    pub outlier_channels: usize,
    pub outlier_gain: f64,
    pub skew: f64,
    pub seed: Seed,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            dims: alloc::vec![128],
            tokens: 512,
            outlier_channels: 2,
            outlier_gain: 100.0,
            skew: 0.0,
            seed: Seed(0),
        }
    }
}

/// Gaussian weights and activations; a seeded subset of activation channels
/// is multiplied by `outlier_gain` and shifted by `skew`. Bit-identical
/// output per (config, seed).
pub fn gen_synthetic_model(cfg: &SynthConfig) -> Result<ModelBundle> {
    if cfg.layers == 0 {
        return Err(Error::InvalidArgument("layers must be >= 1".into()));
    }
    if cfg.dims.is_empty() || cfg.dims.contains(&0) {
        return Err(Error::InvalidArgument(
            "dims must be non-empty and positive".into(),
        ));
    }
    if cfg.tokens == 0 {
        return Err(Error::InvalidArgument("tokens must be >= 1".into()));
    }
    if cfg.outlier_gain.is_nan() || cfg.outlier_gain <= 0.0 || !cfg.outlier_gain.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "outlier gain must be positive, got {}",
            cfg.outlier_gain
        )));
    }
    if !cfg.skew.is_finite() {
        return Err(Error::NonFinite("skew"));
    }
    for d in &cfg.dims {
        if cfg.outlier_channels > *d {
            return Err(Error::InvalidArgument(format!(
                "{} outlier channels but a layer has only {d} channels",
                cfg.outlier_channels
            )));
        }
    }

    let mut rng = SplitMix64::new(cfg.seed);
    let mut layers = Vec::with_capacity(cfg.layers);
    for li in 0..cfg.layers {
        let n = cfg.dims[li % cfg.dims.len()];
        let wscale = 1.0 / math::sqrt(n as f64);
        let w = Matrix::raw(
            n,
            n,
            (0..n * n).map(|_| rng.next_normal() * wscale).collect(),
        );

        // Distinct outlier channels, drawn by rejection.
        let mut outliers: Vec<usize> = Vec::with_capacity(cfg.outlier_channels);
        while outliers.len() < cfg.outlier_channels {
            let c = rng.next_index(n);
            if !outliers.contains(&c) {
                outliers.push(c);
            }
        }

        let mut calib = Matrix::zeros(cfg.tokens, n);
        for t in 0..cfg.tokens {
            let row = calib.row_mut(t);
            for (j, v) in row.iter_mut().enumerate() {
                let g = rng.next_normal();
                *v = if outliers.contains(&j) {
                    g * cfg.outlier_gain + cfg.skew
                } else {
                    g
                };
            }
        }
        layers.push(LayerBundle::new(format!("layer{li}"), w, None, calib)?);
    }
    Ok(ModelBundle::new(layers))
}
