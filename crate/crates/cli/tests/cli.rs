//! End-to-end tests of the `quantlab` binary: command surfaces, file
//! formats, determinism, and the exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quantlab_cli::tensor_file::{TensorData, TensorFile};

fn quantlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quantlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn quantlab")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().unwrap_or(-1);
    assert_eq!(
        got,
        want,
        "exit code {got}, expected {want}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_recipe(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const FAST_RECIPE: &str = "\
[weights]\nclip = 1.0\n\n[[mitigation]]\nkind = \"gptq\"\nblock = 16\n";

#[test]
fn gen_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for out in ["a", "b"] {
        let r = quantlab(
            &[
                "gen", "--layers", "2", "--dims", "16", "--tokens", "24", "--seed", "7", "--out",
                out,
            ],
            dir,
        );
        assert_code(&r, 0);
    }
    for name in [
        "manifest.toml",
        "layer0.w.qtns",
        "layer0.calib.qtns",
        "layer1.w.qtns",
    ] {
        let a = fs::read(dir.join("a").join(name)).unwrap();
        let b = fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical gens");
    }
}

#[test]
fn gen_defaults_write_four_128_layers() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let r = quantlab(&["gen", "--out", "m"], dir);
    assert_code(&r, 0);
    let manifest = fs::read_to_string(dir.join("m/manifest.toml")).unwrap();
    for i in 0..4 {
        assert!(manifest.contains(&format!("layer{i}")), "{manifest}");
    }
    let w = TensorFile::read(&dir.join("m/layer0.w.qtns")).unwrap();
    assert_eq!(w.dims, vec![128, 128]);
    let c = TensorFile::read(&dir.join("m/layer0.calib.qtns")).unwrap();
    assert_eq!(c.dims, vec![512, 128]);
}

#[test]
fn quantize_reports_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen",
                "--layers",
                "2",
                "--dims",
                "32",
                "--tokens",
                "48",
                "--outlier-gain",
                "40",
                "--skew",
                "3",
                "--seed",
                "3",
                "--out",
                "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "r.toml", FAST_RECIPE);
    for report in ["r1.toml", "r2.toml"] {
        assert_code(
            &quantlab(
                &[
                    "quantize",
                    "--model",
                    "m/manifest.toml",
                    "--recipe",
                    &recipe,
                    "--report",
                    report,
                ],
                dir,
            ),
            0,
        );
    }
    let a = fs::read(dir.join("r1.toml")).unwrap();
    let b = fs::read(dir.join("r2.toml")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn quantize_emits_inspection_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "16", "--tokens", "32", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(
        dir,
        "r.toml",
        "[[transforms]]\nkind = \"shift\"\n\n[[transforms]]\nkind = \"rotation\"\n\n\
         [weights]\nclip = 1.0\n\n[[mitigation]]\nkind = \"lowrank\"\nrank = 2\n",
    );
    assert_code(
        &quantlab(
            &[
                "quantize",
                "--model",
                "m/manifest.toml",
                "--recipe",
                &recipe,
                "--report",
                "r.toml.out",
                "--emit-quantized",
                "dump",
            ],
            dir,
        ),
        0,
    );
    for name in [
        "layer0.wq.qtns",
        "layer0.branch_a.qtns",
        "layer0.branch_b.qtns",
        "layer0.t0.shift.qtns",
        "layer0.t1.rotation.qtns",
    ] {
        let t = TensorFile::read(&dir.join("dump").join(name)).unwrap();
        assert!(!t.data.is_empty(), "{name} empty");
    }
    let wq = TensorFile::read(&dir.join("dump/layer0.wq.qtns")).unwrap();
    assert_eq!(wq.dims, vec![16, 16]);
    let a = TensorFile::read(&dir.join("dump/layer0.branch_a.qtns")).unwrap();
    assert_eq!(a.dims, vec![16, 2]);
}

#[test]
fn malformed_recipe_key_exits_2_and_cites_key() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "16", "--tokens", "16", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "bad.toml", "[weights]\nnot_a_key = 3\n");
    let out = quantlab(
        &[
            "quantize",
            "--model",
            "m/manifest.toml",
            "--recipe",
            &recipe,
            "--report",
            "r.toml",
        ],
        dir,
    );
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not_a_key"), "stderr: {stderr}");
}

#[test]
fn rotation_on_non_power_of_two_dims_exits_3_with_layer_and_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "96", "--tokens", "32", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "rot.toml", "[[transforms]]\nkind = \"rotation\"\n");
    let out = quantlab(
        &[
            "quantize",
            "--model",
            "m/manifest.toml",
            "--recipe",
            &recipe,
            "--report",
            "r.toml",
        ],
        dir,
    );
    assert_code(&out, 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("power-of-two"), "stderr: {stderr}");
    assert!(stderr.contains("layer0"), "stderr: {stderr}");
    assert!(stderr.contains("rotation"), "stderr: {stderr}");
}

#[test]
fn missing_model_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let recipe = write_recipe(dir, "r.toml", "");
    let out = quantlab(
        &[
            "quantize",
            "--model",
            "nope/manifest.toml",
            "--recipe",
            &recipe,
            "--report",
            "r.out",
        ],
        dir,
    );
    assert_code(&out, 4);
}

#[test]
fn corrupt_tensor_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "16", "--tokens", "16", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    // Corrupt the magic of the weight tensor.
    let wpath = dir.join("m/layer0.w.qtns");
    let mut bytes = fs::read(&wpath).unwrap();
    bytes[0] = b'X';
    fs::write(&wpath, bytes).unwrap();
    let recipe = write_recipe(dir, "r.toml", "");
    let out = quantlab(
        &[
            "quantize",
            "--model",
            "m/manifest.toml",
            "--recipe",
            &recipe,
            "--report",
            "r.out",
        ],
        dir,
    );
    assert_code(&out, 2);
}

#[test]
fn sweep_default_granularity_reports_table_bits() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "32", "--tokens", "32", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "r.toml", "[weights]\nclip = 1.0\n");
    let out = quantlab(
        &[
            "sweep",
            "--model",
            "m/manifest.toml",
            "--recipe",
            &recipe,
            "--axis",
            "granularity",
            "--report",
            "sweep.toml",
        ],
        dir,
    );
    assert_code(&out, 0);
    let doc = fs::read_to_string(dir.join("sweep.toml")).unwrap();
    for needle in [
        "label = \"group-32\"",
        "extra_bits = 0.5",
        "extra_bits = 0.25",
        "extra_bits = 0.125",
        "extra_bits = 0.0625",
        "extra_bits = 0.03125",
    ] {
        assert!(doc.contains(needle), "missing {needle} in sweep report");
    }
}

#[test]
fn sweep_symmetry_has_four_labeled_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "16", "--tokens", "32", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "r.toml", "[weights]\nclip = 1.0\n");
    let out = quantlab(
        &[
            "sweep",
            "--model",
            "m/manifest.toml",
            "--recipe",
            &recipe,
            "--axis",
            "symmetry",
            "--report",
            "sweep.toml",
        ],
        dir,
    );
    assert_code(&out, 0);
    let doc = fs::read_to_string(dir.join("sweep.toml")).unwrap();
    for label in ["\"Sym\"", "\"W-Asym\"", "\"A-Asym\"", "\"Asym\""] {
        assert!(doc.contains(label), "missing {label}");
    }
}

#[test]
fn sweep_format_axis_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "64", "--tokens", "32", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "r.toml", "");
    let out = quantlab(
        &[
            "sweep",
            "--model",
            "m/manifest.toml",
            "--recipe",
            &recipe,
            "--axis",
            "format",
            "--values",
            "int4,mxfp4",
            "--report",
            "sweep.toml",
        ],
        dir,
    );
    assert_code(&out, 0);
    let doc = fs::read_to_string(dir.join("sweep.toml")).unwrap();
    assert!(doc.contains("label = \"int4\""));
    assert!(doc.contains("label = \"mxfp4\""));
}

#[test]
fn sweep_rejects_unknown_axis() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "16", "--tokens", "16", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "r.toml", "");
    let out = quantlab(
        &[
            "sweep",
            "--model",
            "m/manifest.toml",
            "--recipe",
            &recipe,
            "--axis",
            "frobnication",
            "--report",
            "s.toml",
        ],
        dir,
    );
    assert_code(&out, 2);
}

#[test]
fn mxfp4_representable_round_trip_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // Two groups (rows) of representable values, each sharing one scale.
    let base = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
    let row0: Vec<f64> = (0..32).map(|i| base[i % 8] * 4.0).collect();
    let row1: Vec<f64> = (0..32).map(|i| -base[i % 8] * 0.25).collect();
    let mut data = row0.clone();
    data.extend_from_slice(&row1);
    let t = TensorFile {
        dims: vec![2, 32],
        data: TensorData::F64(data.clone()),
    };
    t.write(&dir.join("x.qtns")).unwrap();

    assert_code(
        &quantlab(
            &[
                "mxfp4",
                "--encode",
                "--in",
                "x.qtns",
                "--out",
                "codes.qtns",
                "--clip",
                "1.0",
            ],
            dir,
        ),
        0,
    );
    assert_code(
        &quantlab(
            &[
                "mxfp4",
                "--decode",
                "--in",
                "codes.qtns",
                "--out",
                "back.qtns",
            ],
            dir,
        ),
        0,
    );
    let back = TensorFile::read(&dir.join("back.qtns")).unwrap();
    assert_eq!(back.dims, vec![2, 32]);
    assert_eq!(back.data.to_f64(), data);
}

#[test]
fn mxfp4_zero_tensor_gives_zero_codes_and_exponents() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let t = TensorFile {
        dims: vec![1, 40],
        data: TensorData::F64(vec![0.0; 40]),
    };
    t.write(&dir.join("z.qtns")).unwrap();
    assert_code(
        &quantlab(
            &["mxfp4", "--encode", "--in", "z.qtns", "--out", "zc.qtns"],
            dir,
        ),
        0,
    );
    let codes = TensorFile::read(&dir.join("zc.qtns")).unwrap();
    assert!(codes.data.to_f64().iter().all(|v| *v == 0.0));
    let exps = TensorFile::read(&dir.join("zc.qtns.exp")).unwrap();
    assert_eq!(exps.dims, vec![1, 2]);
    assert!(exps.data.to_f64().iter().all(|v| *v == 0.0));
}

#[test]
fn mxfp4_decode_rejects_malformed_aux() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let t = TensorFile {
        dims: vec![1, 32],
        data: TensorData::F64(vec![1.0; 32]),
    };
    t.write(&dir.join("x.qtns")).unwrap();
    assert_code(
        &quantlab(
            &["mxfp4", "--encode", "--in", "x.qtns", "--out", "c.qtns"],
            dir,
        ),
        0,
    );
    // Wrong-shaped auxiliary tensor.
    TensorFile {
        dims: vec![2, 2],
        data: TensorData::F32(vec![0.0; 4]),
    }
    .write(&dir.join("c.qtns.exp"))
    .unwrap();
    let out = quantlab(
        &["mxfp4", "--decode", "--in", "c.qtns", "--out", "y.qtns"],
        dir,
    );
    assert_code(&out, 2);
}

#[test]
fn mxfp4_requires_exactly_one_direction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = quantlab(&["mxfp4", "--in", "a", "--out", "b"], dir);
    assert_code(&out, 2);
    // --encode --decode together is a clap conflict, also exit 2.
    let out = quantlab(
        &["mxfp4", "--encode", "--decode", "--in", "a", "--out", "b"],
        dir,
    );
    assert_code(&out, 2);
}

#[test]
fn sweep_and_mxfp4_outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "32", "--tokens", "32", "--seed", "2", "--out",
                "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "r.toml", "[weights]\nclip = 1.0\n");
    for report in ["s1.toml", "s2.toml"] {
        assert_code(
            &quantlab(
                &[
                    "sweep",
                    "--model",
                    "m/manifest.toml",
                    "--recipe",
                    &recipe,
                    "--axis",
                    "symmetry",
                    "--report",
                    report,
                ],
                dir,
            ),
            0,
        );
    }
    assert_eq!(
        fs::read(dir.join("s1.toml")).unwrap(),
        fs::read(dir.join("s2.toml")).unwrap()
    );
    for out in ["c1.qtns", "c2.qtns"] {
        assert_code(
            &quantlab(
                &[
                    "mxfp4",
                    "--encode",
                    "--in",
                    "m/layer0.calib.qtns",
                    "--out",
                    out,
                ],
                dir,
            ),
            0,
        );
    }
    assert_eq!(
        fs::read(dir.join("c1.qtns")).unwrap(),
        fs::read(dir.join("c2.qtns")).unwrap()
    );
    assert_eq!(
        fs::read(dir.join("c1.qtns.exp")).unwrap(),
        fs::read(dir.join("c2.qtns.exp")).unwrap()
    );
}

#[test]
fn gen_rejects_invalid_dims() {
    let tmp = tempfile::tempdir().unwrap();
    let out = quantlab(&["gen", "--dims", "0", "--out", "m"], tmp.path());
    assert_code(&out, 2);
}

#[test]
fn granularity_sweep_on_mxfp4_recipe_exits_2() {
    // MXFP4 pins per-group(32); substituting other group sizes builds an
    // invalid recipe, which is a configuration error.
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "64", "--tokens", "16", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(dir, "mx.toml", "[weights]\nformat = \"mxfp4\"\n");
    let out = quantlab(
        &[
            "sweep",
            "--model",
            "m/manifest.toml",
            "--recipe",
            &recipe,
            "--axis",
            "granularity",
            "--values",
            "64",
            "--report",
            "s.toml",
        ],
        dir,
    );
    assert_code(&out, 2);
}

#[test]
fn sixteen_bit_recipe_reports_near_lossless_mse() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(
        &quantlab(
            &[
                "gen", "--layers", "1", "--dims", "32", "--tokens", "64", "--out", "m",
            ],
            dir,
        ),
        0,
    );
    let recipe = write_recipe(
        dir,
        "r.toml",
        "[weights]\nbits = 16\nclip = 1.0\n\n[activations]\nbits = 16\n",
    );
    assert_code(
        &quantlab(
            &[
                "quantize",
                "--model",
                "m/manifest.toml",
                "--recipe",
                &recipe,
                "--report",
                "r.out.toml",
            ],
            dir,
        ),
        0,
    );
    let doc = fs::read_to_string(dir.join("r.out.toml")).unwrap();
    let mse_line = doc
        .lines()
        .find(|l| l.starts_with("output_mse"))
        .expect("report has an aggregate output_mse");
    let value: f64 = mse_line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!(value <= 1e-6, "output_mse {value}");
}
