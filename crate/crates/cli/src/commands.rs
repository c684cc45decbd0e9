//! Command implementations behind the CLI surface.

use std::fs;
use std::path::{Path, PathBuf};

use quantlab_core::linalg::Seed;
use quantlab_core::pipeline::{
    gen_synthetic_model, run_recipe_detailed, sweep, FormatChoice, SweepAxis, SynthConfig,
};
use quantlab_core::quantizers::{
    mxfp4_dequantize, mxfp4_quantize, ParamAxis, QuantParams, QuantSpec, QuantizedTensor,
    MXFP4_GROUP,
};
use quantlab_core::transforms::AppliedTransform;

use crate::error::CliError;
use crate::manifest::load_model;
use crate::manifest::{manifest_to_string, ManifestDoc, ManifestLayer, MANIFEST_VERSION};
use crate::recipe_file::load_recipe;
use crate::report_file::{report_table, report_to_toml, sweep_table, sweep_to_toml};
use crate::tensor_file::{TensorData, TensorFile};

pub struct GenOptions {
    pub layers: usize,
    pub dims: Vec<usize>,
    pub tokens: usize,
    pub outlier_channels: usize,
    pub outlier_gain: f64,
    pub skew: f64,
    pub seed: u64,
    pub out: PathBuf,
}

/// Generate a synthetic model bundle and write its tensors plus a manifest.
pub fn cmd_gen(opts: &GenOptions) -> Result<(), CliError> {
    let cfg = SynthConfig {
        layers: opts.layers,
        dims: opts.dims.clone(),
        tokens: opts.tokens,
        outlier_channels: opts.outlier_channels,
        outlier_gain: opts.outlier_gain,
        skew: opts.skew,
        seed: Seed(opts.seed),
    };
    let model = gen_synthetic_model(&cfg).map_err(|e| CliError::Validation(e.to_string()))?;

    fs::create_dir_all(&opts.out)
        .map_err(|e| CliError::Io(format!("create {}: {e}", opts.out.display())))?;
    let mut entries = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let w_name = format!("{}.w.qtns", layer.name);
        let c_name = format!("{}.calib.qtns", layer.name);
        TensorFile::from_matrix(&layer.w).write(&opts.out.join(&w_name))?;
        TensorFile::from_matrix(&layer.calib).write(&opts.out.join(&c_name))?;
        entries.push(ManifestLayer {
            name: layer.name.clone(),
            weight: w_name,
            bias: None,
            calib: c_name,
        });
    }
    let doc = ManifestDoc {
        version: MANIFEST_VERSION,
        layers: entries,
    };
    let manifest_path = opts.out.join("manifest.toml");
    fs::write(&manifest_path, manifest_to_string(&doc)?)
        .map_err(|e| CliError::Io(format!("write {}: {e}", manifest_path.display())))?;
    println!(
        "wrote {} layer(s) and {}",
        model.layers.len(),
        manifest_path.display()
    );
    Ok(())
}

fn write_artifacts(
    dir: &Path,
    artifacts: &[quantlab_core::pipeline::LayerArtifacts],
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("create {}: {e}", dir.display())))?;
    for art in artifacts {
        TensorFile::from_matrix(&art.w_q_dequant)
            .write(&dir.join(format!("{}.wq.qtns", art.name)))?;
        if let Some(branch) = &art.branch {
            TensorFile::from_matrix(&branch.a)
                .write(&dir.join(format!("{}.branch_a.qtns", art.name)))?;
            TensorFile::from_matrix(&branch.b)
                .write(&dir.join(format!("{}.branch_b.qtns", art.name)))?;
        }
        for (i, applied) in art.applied.iter().enumerate() {
            match applied {
                AppliedTransform::Shift(t) => {
                    TensorFile::from_vector(t.values())
                        .write(&dir.join(format!("{}.t{i}.shift.qtns", art.name)))?;
                }
                AppliedTransform::Scale(s) => {
                    TensorFile::from_vector(s.values())
                        .write(&dir.join(format!("{}.t{i}.scale.qtns", art.name)))?;
                }
                AppliedTransform::Rotation(o) => {
                    TensorFile::from_matrix(o.matrix())
                        .write(&dir.join(format!("{}.t{i}.rotation.qtns", art.name)))?;
                }
            }
        }
    }
    Ok(())
}

/// Run a recipe over a model, write the report, optionally dump artifacts.
pub fn cmd_quantize(
    model_path: &Path,
    recipe_path: &Path,
    report_path: &Path,
    emit: Option<&Path>,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let recipe = load_recipe(recipe_path)?;
    let (report, artifacts) = run_recipe_detailed(&model, &recipe)?;
    fs::write(report_path, report_to_toml(&report)?)
        .map_err(|e| CliError::Io(format!("write {}: {e}", report_path.display())))?;
    print!("{}", report_table(&report, &recipe));
    println!("wrote report to {}", report_path.display());
    if let Some(dir) = emit {
        write_artifacts(dir, &artifacts)?;
        println!("wrote quantized artifacts to {}", dir.display());
    }
    Ok(())
}

fn parse_axis(axis: &str, values: Option<&str>) -> Result<SweepAxis, CliError> {
    match axis {
        "granularity" => {
            let groups = match values {
                None => vec![32, 64, 128, 256, 512],
                Some(csv) => csv
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<usize>().map_err(|_| {
                            CliError::validation(format!("--values: bad group size '{s}'"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            if groups.is_empty() || groups.contains(&0) {
                return Err(CliError::validation("--values: group sizes must be >= 1"));
            }
            Ok(SweepAxis::Granularity(groups))
        }
        "symmetry" => {
            if values.is_some() {
                return Err(CliError::validation(
                    "--values: the symmetry axis runs the fixed four combinations",
                ));
            }
            Ok(SweepAxis::Symmetry)
        }
        "format" => {
            let choices = match values {
                None => vec![FormatChoice::Int4, FormatChoice::Mxfp4],
                Some(csv) => csv
                    .split(',')
                    .map(|s| match s.trim() {
                        "int4" => Ok(FormatChoice::Int4),
                        "mxfp4" => Ok(FormatChoice::Mxfp4),
                        other => Err(CliError::validation(format!(
                            "--values: unknown format '{other}' (expected int4 or mxfp4)"
                        ))),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            Ok(SweepAxis::Format(choices))
        }
        other => Err(CliError::validation(format!(
            "--axis: unknown axis '{other}' (expected granularity, symmetry, or format)"
        ))),
    }
}

/// Run one recipe across a sweep axis and write the multi-row report.
pub fn cmd_sweep(
    model_path: &Path,
    recipe_path: &Path,
    axis: &str,
    values: Option<&str>,
    report_path: &Path,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let recipe = load_recipe(recipe_path)?;
    let axis = parse_axis(axis, values)?;
    let result = sweep(&model, &recipe, &axis)?;
    fs::write(report_path, sweep_to_toml(&result)?)
        .map_err(|e| CliError::Io(format!("write {}: {e}", report_path.display())))?;
    print!("{}", sweep_table(&result, &recipe));
    println!("wrote sweep report to {}", report_path.display());
    Ok(())
}

/// Path of the auxiliary exponent tensor next to an MXFP4 codes file.
pub fn exponent_path(codes: &Path) -> PathBuf {
    let mut s = codes.as_os_str().to_owned();
    s.push(".exp");
    PathBuf::from(s)
}

fn tensor_as_matrix(t: &TensorFile) -> Result<quantlab_core::linalg::Matrix, CliError> {
    t.to_matrix()
}

/// Encode a tensor file to MXFP4 codes plus per-group E8M0 exponents.
pub fn cmd_mxfp4_encode(input: &Path, output: &Path, clip: f64) -> Result<(), CliError> {
    let t = TensorFile::read(input)?;
    let x = tensor_as_matrix(&t)?;
    let q = mxfp4_quantize(&x, clip).map_err(|e| CliError::Validation(e.to_string()))?;

    let codes = TensorFile {
        dims: t.dims.clone(),
        data: TensorData::F32(q.codes.iter().map(|c| *c as f32).collect()),
    };
    codes.write(output)?;

    let groups_per_row = x.cols().div_ceil(MXFP4_GROUP);
    let exps: Vec<f32> = q
        .params
        .scales
        .iter()
        .map(|s| s.log2().round() as f32)
        .collect();
    let exp_file = TensorFile {
        dims: vec![x.rows() as u64, groups_per_row as u64],
        data: TensorData::F32(exps),
    };
    let exp_out = exponent_path(output);
    exp_file.write(&exp_out)?;
    println!(
        "encoded {} -> {} (+ {})",
        input.display(),
        output.display(),
        exp_out.display()
    );
    Ok(())
}

/// Decode MXFP4 codes (and the sibling exponent tensor) back to values.
pub fn cmd_mxfp4_decode(input: &Path, output: &Path) -> Result<(), CliError> {
    let codes_file = TensorFile::read(input)?;
    let exp_file = TensorFile::read(&exponent_path(input))?;

    let codes_m = tensor_as_matrix(&codes_file)?;
    let (rows, cols) = (codes_m.rows(), codes_m.cols());
    let mut codes = Vec::with_capacity(rows * cols);
    for v in codes_m.data() {
        let c = *v as i64;
        if c as f64 != *v || !(0..16).contains(&c) {
            return Err(CliError::validation(format!(
                "codes tensor holds non-nibble value {v}"
            )));
        }
        codes.push(c);
    }

    let groups_per_row = cols.div_ceil(MXFP4_GROUP);
    let exps = exp_file.data.to_f64();
    if exp_file.dims != vec![rows as u64, groups_per_row as u64]
        || exps.len() != rows * groups_per_row
    {
        return Err(CliError::validation(format!(
            "auxiliary exponent tensor has dims {:?}, expected [{rows}, {groups_per_row}]",
            exp_file.dims
        )));
    }
    let mut scales = Vec::with_capacity(exps.len());
    for e in &exps {
        let ei = *e as i32;
        if ei as f64 != *e || !(-127..=127).contains(&ei) {
            return Err(CliError::validation(format!(
                "auxiliary exponent {e} is not an integer in [-127, 127]"
            )));
        }
        scales.push(f64::powi(2.0, ei));
    }

    let q = QuantizedTensor {
        rows,
        cols,
        codes,
        params: QuantParams {
            axis: ParamAxis::GroupsAlongRow(MXFP4_GROUP),
            scales,
            zero_points: None,
        },
        spec: QuantSpec::mxfp4(),
    };
    let x = mxfp4_dequantize(&q).map_err(|e| CliError::Validation(e.to_string()))?;
    let out = TensorFile {
        dims: codes_file.dims.clone(),
        data: TensorData::F64(x.data().to_vec()),
    };
    out.write(output)?;
    println!("decoded {} -> {}", input.display(), output.display());
    Ok(())
}
