//! Configuration sweeps: run one base recipe across an axis of quantizer
//! settings and collect one report per value.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::quantizers::{extra_bits_overhead, ClipPolicy, Granularity, QuantFormat, QuantSpec};
use crate::Result;

use super::{run_recipe, ModelBundle, Recipe, Report};

/// Number format choice for the format axis; each choice swaps in its
/// canonical W4A4 quantizer pair (per-row symmetric int4 with weight clip
/// search + per-token asymmetric int4, versus MXFP4 with weight clip search
/// and activation clip 3/4).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatChoice {
    Int4,
    Mxfp4,
}

impl FormatChoice {
    pub fn label(&self) -> &'static str {
        match self {
            FormatChoice::Int4 => "int4",
            FormatChoice::Mxfp4 => "mxfp4",
        }
    }
}

/// Sweep axis. Granularity substitutes the weight group size; symmetry runs
/// the four weight/activation symmetry combinations; format swaps the
/// number format of both quantizers.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Granularity(Vec<usize>),
    Symmetry,
    Format(Vec<FormatChoice>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Granularity(_) => "granularity",
            SweepAxis::Symmetry => "symmetry",
            SweepAxis::Format(_) => "format",
        }
    }
}

/// One sweep row: the axis value label, the nominal per-group scale storage
/// overhead for that configuration (when it is per-group), and the full
/// report.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    /// `scale_storage_bits / g` for per-group weight quantizers (16-bit
    /// scales for uniform int, 8-bit E8M0 for MXFP4); absent otherwise.
    pub extra_bits: Option<f64>,
    pub report: Report,
}

/// Result of a sweep, one row per axis value in deterministic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

fn scale_storage_bits(spec: &QuantSpec) -> u32 {
    match spec.format {
        QuantFormat::Mxfp4 => 8,
        QuantFormat::UniformInt => 16,
    }
}

fn nominal_extra_bits(spec: &QuantSpec) -> Option<f64> {
    match spec.granularity {
        Granularity::PerGroup(_) => extra_bits_overhead(spec, scale_storage_bits(spec)).ok(),
        _ => None,
    }
}

/// Run `base` once per axis value, substituting the axis setting.
pub fn sweep(model: &ModelBundle, base: &Recipe, axis: &SweepAxis) -> Result<SweepReport> {
    base.validate()?;
    let mut rows = Vec::new();
    match axis {
        SweepAxis::Granularity(groups) => {
            for &g in groups {
                let mut recipe = base.clone();
                recipe.w_spec = recipe.w_spec.with_granularity(Granularity::PerGroup(g));
                let extra = nominal_extra_bits(&recipe.w_spec);
                let report = run_recipe(model, &recipe)?;
                rows.push(SweepRow {
                    label: format!("group-{g}"),
                    extra_bits: extra,
                    report,
                });
            }
        }
        SweepAxis::Symmetry => {
            for (label, w_sym, a_sym) in [
                ("Sym", true, true),
                ("W-Asym", false, true),
                ("A-Asym", true, false),
                ("Asym", false, false),
            ] {
                let mut recipe = base.clone();
                recipe.w_spec = recipe.w_spec.with_symmetric(w_sym);
                recipe.a_spec = recipe.a_spec.with_symmetric(a_sym);
                let extra = nominal_extra_bits(&recipe.w_spec);
                let report = run_recipe(model, &recipe)?;
                rows.push(SweepRow {
                    label: String::from(label),
                    extra_bits: extra,
                    report,
                });
            }
        }
        SweepAxis::Format(choices) => {
            for choice in choices {
                let mut recipe = base.clone();
                match choice {
                    FormatChoice::Int4 => {
                        recipe.w_spec =
                            QuantSpec::uniform(4).with_clip(ClipPolicy::default_search());
                        recipe.a_spec = QuantSpec::uniform(4).with_symmetric(false);
                    }
                    FormatChoice::Mxfp4 => {
                        recipe.w_spec = QuantSpec::mxfp4().with_clip(ClipPolicy::default_search());
                        recipe.a_spec = QuantSpec::mxfp4().with_clip(ClipPolicy::Fixed(0.75));
                    }
                }
                let extra = nominal_extra_bits(&recipe.w_spec);
                let report = run_recipe(model, &recipe)?;
                rows.push(SweepRow {
                    label: String::from(choice.label()),
                    extra_bits: extra,
                    report,
                });
            }
        }
    }
    Ok(SweepReport {
        axis: String::from(axis.name()),
        rows,
    })
}
