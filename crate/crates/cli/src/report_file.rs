//! Report emission: a versioned TOML document for machines and an aligned
//! table for humans, with transform (DN) and mitigation (EC) columns laid
//! out side by side.

use std::fmt::Write as _;

use serde::Serialize;

use quantlab_core::pipeline::{MitigationStep, Recipe, Report, SweepReport};
use quantlab_core::transforms::{RotationSource, ScaleSource, TransformStep};

use crate::error::CliError;

#[derive(Serialize)]
struct MetricsDoc {
    weight_frob_err: f64,
    output_mse: f64,
    proxy_loss: f64,
    flatness_max_over_mean: f64,
    kurtosis: f64,
    bits_per_weight: f64,
}

#[derive(Serialize)]
struct LayerDoc {
    name: String,
    #[serde(flatten)]
    metrics: MetricsDoc,
}

#[derive(Serialize)]
struct ReportDoc {
    version: u32,
    recipe: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
    aggregate: MetricsDoc,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize)]
struct SweepRowDoc {
    label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra_bits: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
    aggregate: MetricsDoc,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize)]
struct SweepDoc {
    version: u32,
    axis: String,
    rows: Vec<SweepRowDoc>,
}

fn metrics_doc(m: &quantlab_core::pipeline::LayerMetrics) -> MetricsDoc {
    MetricsDoc {
        weight_frob_err: m.weight_frob_err,
        output_mse: m.output_mse,
        proxy_loss: m.proxy_loss,
        flatness_max_over_mean: m.flatness_max_over_mean,
        kurtosis: m.kurtosis,
        bits_per_weight: m.bits_per_weight,
    }
}

fn aggregate_doc(a: &quantlab_core::pipeline::AggregateMetrics) -> MetricsDoc {
    MetricsDoc {
        weight_frob_err: a.weight_frob_err,
        output_mse: a.output_mse,
        proxy_loss: a.proxy_loss,
        flatness_max_over_mean: a.flatness_max_over_mean,
        kurtosis: a.kurtosis,
        bits_per_weight: a.bits_per_weight,
    }
}

fn report_doc(report: &Report) -> ReportDoc {
    ReportDoc {
        version: report.version,
        recipe: report.recipe.clone(),
        warnings: report.warnings.clone(),
        aggregate: aggregate_doc(&report.aggregate),
        layers: report
            .layers
            .iter()
            .map(|l| LayerDoc {
                name: l.name.clone(),
                metrics: metrics_doc(l),
            })
            .collect(),
    }
}

/// Serialize a report to its machine-readable TOML body. Byte-identical for
/// identical inputs; contains no timestamps.
pub fn report_to_toml(report: &Report) -> Result<String, CliError> {
    toml::to_string(&report_doc(report))
        .map_err(|e| CliError::validation(format!("report serialization: {e}")))
}

pub fn sweep_to_toml(sweep: &SweepReport) -> Result<String, CliError> {
    let doc = SweepDoc {
        version: 1,
        axis: sweep.axis.clone(),
        rows: sweep
            .rows
            .iter()
            .map(|r| SweepRowDoc {
                label: r.label.clone(),
                extra_bits: r.extra_bits,
                warnings: r.report.warnings.clone(),
                aggregate: aggregate_doc(&r.report.aggregate),
                layers: r
                    .report
                    .layers
                    .iter()
                    .map(|l| LayerDoc {
                        name: l.name.clone(),
                        metrics: metrics_doc(l),
                    })
                    .collect(),
            })
            .collect(),
    };
    toml::to_string(&doc).map_err(|e| CliError::validation(format!("sweep serialization: {e}")))
}

/// The "data normalization" column: the recipe's transform list.
pub fn dn_column(recipe: &Recipe) -> String {
    if recipe.transforms.steps.is_empty() {
        return "-".into();
    }
    let parts: Vec<String> = recipe
        .transforms
        .steps
        .iter()
        .map(|s| match s {
            TransformStep::Shift => "shift".into(),
            TransformStep::Scale(ScaleSource::Calibrated { .. }) => "scaling".into(),
            TransformStep::Scale(ScaleSource::Optimized) => "opt-scaling".into(),
            TransformStep::Rotation(RotationSource::Optimized) => "opt-rotation".into(),
            TransformStep::Rotation(_) => "rotation".into(),
        })
        .collect();
    parts.join("+")
}

/// The "error compensation" column: the recipe's mitigation list.
pub fn ec_column(recipe: &Recipe) -> String {
    if recipe.mitigation.is_empty() {
        return "-".into();
    }
    let parts: Vec<String> = recipe
        .mitigation
        .iter()
        .map(|m| match m {
            MitigationStep::Gptq { .. } => "gptq".into(),
            MitigationStep::LowRank { .. } => "low-rank".into(),
            MitigationStep::ScaledLowRank { .. } => "scaled-low-rank".into(),
        })
        .collect();
    parts.join("+")
}

const METRIC_HEADER: &str =
    "weight_frob_err  output_mse    proxy_loss    max/mean    kurtosis    bits/w";

fn metric_cells(m: &MetricsDoc) -> String {
    format!(
        "{:<16.6e} {:<13.6e} {:<13.6e} {:<11.4} {:<11.4} {:<8.5}",
        m.weight_frob_err,
        m.output_mse,
        m.proxy_loss,
        m.flatness_max_over_mean,
        m.kurtosis,
        m.bits_per_weight
    )
}

/// Human-readable table for one report.
pub fn report_table(report: &Report, recipe: &Recipe) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "DN: {}    EC: {}",
        dn_column(recipe),
        ec_column(recipe)
    );
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let _ = writeln!(out, "{:<12} {METRIC_HEADER}", "layer");
    for l in &report.layers {
        let _ = writeln!(out, "{:<12} {}", l.name, metric_cells(&metrics_doc(l)));
    }
    let _ = writeln!(
        out,
        "{:<12} {}",
        "mean",
        metric_cells(&aggregate_doc(&report.aggregate))
    );
    out
}

/// Human-readable table for a sweep: one row per axis value.
pub fn sweep_table(sweep: &SweepReport, recipe: &Recipe) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "axis: {}    DN: {}    EC: {}",
        sweep.axis,
        dn_column(recipe),
        ec_column(recipe)
    );
    let _ = writeln!(out, "{:<12} {:<12} {METRIC_HEADER}", "value", "extra_bits");
    for row in &sweep.rows {
        let extra = match row.extra_bits {
            Some(b) => format!("{b}"),
            None => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<12} {:<12} {}",
            row.label,
            extra,
            metric_cells(&aggregate_doc(&row.report.aggregate))
        );
    }
    out
}
