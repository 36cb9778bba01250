use std::path::Path;
use std::process::{Command, Output};

use despeckle_core::metrics::write_rois;
use despeckle_core::pipeline::{load_image, read_matrix, save_png16, write_matrix, StackManifest};
use despeckle_core::{evaluate, Image, Matrix, Roi, RunReport};

fn despeckle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_despeckle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn failed_with(out: &Output, needle: &str) -> String {
    assert_eq!(
        out.status.code(),
        Some(1),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains(needle), "stderr lacks {needle:?}: {err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("spec.json");
    std::fs::write(&path, json).unwrap();
    path
}

const SMALL: &str = r#"{"n": 5, "width": 48, "height": 48, "seed": 2}"#;

#[test]
fn synth_writes_stack_and_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let out_dir = dir.path().join("stack");
    ok(&despeckle(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-dir",
        s(&out_dir),
    ]));

    let manifest = StackManifest::read(&out_dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.paths.len(), 5);
    assert!(manifest.paths.iter().all(|p| p.exists()));
    assert_eq!(manifest.frame.map(|f| (f.width, f.height)), Some((48, 48)));
    assert!(out_dir.join("clean.png").exists());

    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("truth.json")).unwrap())
            .unwrap();
    assert_eq!(truth["transforms"].as_array().unwrap().len(), 5);
    assert_eq!(truth["spec"]["seed"], 2);
    let rois = std::fs::read_to_string(out_dir.join("rois.txt")).unwrap();
    assert!(rois.lines().filter(|l| l.starts_with("feature")).count() >= 5);
}

#[test]
fn seed_flag_overrides_the_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    ok(&despeckle(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-dir",
        s(&a),
        "--seed",
        "9",
    ]));
    ok(&despeckle(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-dir",
        s(&b),
        "--seed",
        "9",
    ]));
    ok(&despeckle(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-dir",
        s(&c),
    ]));
    let scan = |d: &Path| std::fs::read(d.join("scan_001.png")).unwrap();
    assert_eq!(scan(&a), scan(&b));
    assert_ne!(scan(&a), scan(&c));
}

#[test]
fn denoise_manifest_report_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let stack = dir.path().join("stack");
    ok(&despeckle(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-dir",
        s(&stack),
    ]));

    let (image, report) = (dir.path().join("out.png"), dir.path().join("report.json"));
    let baseline = dir.path().join("baseline.png");
    ok(&despeckle(&[
        "denoise",
        "--input",
        s(&stack.join("manifest.txt")),
        "--rois",
        s(&stack.join("rois.txt")),
        "--out",
        s(&image),
        "--report",
        s(&report),
        "--baseline-out",
        s(&baseline),
    ]));
    assert!(baseline.exists());
    let first = RunReport::read(&report).unwrap();
    assert_eq!(first.outputs.image.as_deref(), Some(image.as_path()));
    assert_eq!(first.alignment.transforms.len(), 5);
    let metrics = first.metrics.as_ref().expect("rois were given");
    assert_eq!(metrics.inputs.len(), 5);
    assert!(
        metrics.output.avg_snr
            > metrics
                .inputs
                .iter()
                .map(|m| m.avg_snr)
                .fold(f64::MIN, f64::max)
    );

    // The report round-trips and reproduces the run.
    assert_eq!(
        RunReport::from_json(&first.to_json().unwrap()).unwrap(),
        first
    );
    let (image2, report2) = (dir.path().join("again.png"), dir.path().join("again.json"));
    ok(&despeckle(&[
        "denoise",
        "--replay",
        s(&report),
        "--out",
        s(&image2),
        "--report",
        s(&report2),
    ]));
    assert_eq!(
        std::fs::read(&image).unwrap(),
        std::fs::read(&image2).unwrap()
    );
    let second = RunReport::read(&report2).unwrap();
    assert_eq!(second.request, first.request);
    assert_eq!(second.alignment, first.alignment);
    assert_eq!(second.metrics, first.metrics);
}

#[test]
fn noiseless_unmoved_stack_reproduces_the_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        r#"{"n": 4, "width": 40, "height": 40, "max_translation": 0, "max_rotation": 0,
            "speckle_sigma": 0, "sparse_fraction": 0}"#,
    );
    let stack = dir.path().join("stack");
    ok(&despeckle(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-dir",
        s(&stack),
    ]));
    let image = dir.path().join("out.png");
    ok(&despeckle(&[
        "denoise",
        "--input",
        s(&spec),
        "--out",
        s(&image),
        "--no-baseline",
    ]));
    let out = load_image(&image).unwrap();
    let clean = load_image(&stack.join("clean.png")).unwrap();
    let worst = out
        .as_slice()
        .iter()
        .zip(clean.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn synthetic_denoise_reports_truth_misalignment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let report = dir.path().join("r.json");
    let out = despeckle(&[
        "denoise",
        "--input",
        s(&spec),
        "--out",
        s(&dir.path().join("o.png")),
        "--report",
        s(&report),
        "--model",
        "translation",
        "--method",
        "mean",
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("misalignment vs truth"));
    let r = RunReport::read(&report).unwrap();
    assert!(r.truth_misalignment.is_some());
    assert_eq!(r.request.config.model.name(), "translation");
    assert_eq!(r.request.method.name(), "mean");
}

#[test]
fn align_report_lists_transforms() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let stack = dir.path().join("stack");
    ok(&despeckle(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-dir",
        s(&stack),
    ]));
    let report = dir.path().join("align.json");
    let aligned = dir.path().join("aligned");
    ok(&despeckle(&[
        "align",
        "--input",
        s(&stack.join("manifest.txt")),
        "--model",
        "similarity",
        "--outer-max-iters",
        "30",
        "--report",
        s(&report),
        "--out-dir",
        s(&aligned),
    ]));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let transforms = v["alignment"]["transforms"].as_array().unwrap();
    assert_eq!(transforms.len(), 5);
    assert_eq!(transforms[0]["model"], "similarity");
    assert_eq!(transforms[0]["params"].as_array().unwrap().len(), 4);
    assert_eq!(
        transforms[0]["matrix"][2],
        serde_json::json!([0.0, 0.0, 1.0])
    );
    assert_eq!(v["config"]["outer_max_iters"], 30);
    assert!(!v["alignment"]["history"].as_array().unwrap().is_empty());
    assert_eq!(
        StackManifest::read(&aligned.join("manifest.txt"))
            .unwrap()
            .paths
            .len(),
        5
    );
}

#[test]
fn rpca_on_a_text_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let n = 40;
    let l0 = Matrix::from_fn(n, n, |r, c| {
        (0.3 + 0.1 * r as f64).sin() * (1.0 + 0.05 * c as f64)
    });
    let s0 = Matrix::from_fn(
        n,
        n,
        |r, c| if (7 * r + 13 * c) % 29 == 0 { 5.0 } else { 0.0 },
    );
    let input = dir.path().join("d.txt");
    write_matrix(&input, &(&l0 + &s0)).unwrap();
    let (l_path, s_path) = (dir.path().join("l.txt"), dir.path().join("s.txt"));
    ok(&despeckle(&[
        "rpca",
        "--input",
        s(&input),
        "--out-l",
        s(&l_path),
        "--out-s",
        s(&s_path),
    ]));
    let l = read_matrix(&l_path).unwrap();
    let sp = read_matrix(&s_path).unwrap();
    assert!((&l - &l0).norm() / l0.norm() < 1e-3);
    assert!((&sp - &s0).norm() / s0.norm() < 1e-3);
}

#[test]
fn rpca_image_output_needs_a_stack() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.txt");
    write_matrix(&input, &Matrix::from_fn(6, 5, |r, c| (r * c) as f64 + 1.0)).unwrap();
    let out = despeckle(&[
        "rpca",
        "--input",
        s(&input),
        "--out-l",
        s(&dir.path().join("ldir")),
        "--out-s",
        s(&dir.path().join("s.txt")),
    ]);
    failed_with(&out, "[write]");
}

#[test]
fn metrics_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(30, 20, |x, y| {
        0.2 + 0.02 * ((x * 7 + y * 3) % 5) as f64 + if x >= 15 { 0.5 } else { 0.0 }
    });
    let (image, rois_path, report) = (
        dir.path().join("i.png"),
        dir.path().join("r.txt"),
        dir.path().join("m.json"),
    );
    save_png16(&image, &img).unwrap();
    let rois = vec![
        Roi::background(1, 1, 10, 10),
        Roi::feature(16, 2, 8, 8),
        Roi::feature(20, 10, 6, 6),
    ];
    write_rois(&rois_path, &rois).unwrap();
    ok(&despeckle(&[
        "metrics",
        "--image",
        s(&image),
        "--rois",
        s(&rois_path),
        "--report",
        s(&report),
    ]));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let expected = evaluate(&load_image(&image).unwrap(), &rois).unwrap();
    assert_eq!(v["metrics"]["avg_snr"].as_f64().unwrap(), expected.avg_snr);
    assert_eq!(v["metrics"]["avg_cnr"].as_f64().unwrap(), expected.avg_cnr);
}

#[test]
fn missing_input_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = despeckle(&[
        "denoise",
        "--input",
        s(&dir.path().join("none.txt")),
        "--out",
        s(&dir.path().join("o.png")),
    ]);
    failed_with(&out, "[load]");
    assert!(!dir.path().join("o.png").exists());
}

#[test]
fn mismatched_sizes_name_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    save_png16(&a, &Image::filled(20, 16, 0.5)).unwrap();
    save_png16(&b, &Image::filled(20, 18, 0.5)).unwrap();
    let manifest = dir.path().join("m.txt");
    std::fs::write(&manifest, "a.png\nb.png\n").unwrap();
    let out = despeckle(&[
        "align",
        "--input",
        s(&manifest),
        "--report",
        s(&dir.path().join("r.json")),
    ]);
    let err = failed_with(&out, "[load]");
    assert!(err.contains("a.png") && err.contains("b.png"), "{err}");
}

#[test]
fn empty_manifest_and_bad_spec_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.txt");
    std::fs::write(&manifest, "# nothing\n").unwrap();
    let out = despeckle(&[
        "denoise",
        "--input",
        s(&manifest),
        "--out",
        s(&dir.path().join("o.png")),
    ]);
    failed_with(&out, "no images");

    let spec = write_spec(dir.path(), r#"{"n": 1}"#);
    let out = despeckle(&[
        "synth",
        "--spec",
        s(&spec),
        "--out-dir",
        s(&dir.path().join("x")),
    ]);
    failed_with(&out, "[load]");
    let spec = write_spec(dir.path(), r#"{"frames": 3}"#);
    let out = despeckle(&[
        "denoise",
        "--input",
        s(&spec),
        "--out",
        s(&dir.path().join("o.png")),
    ]);
    failed_with(&out, "unknown field");
}

#[test]
fn flat_scan_fails_in_the_align_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for i in 0..3 {
        let path = dir.path().join(format!("{i}.png"));
        save_png16(&path, &Image::filled(24, 24, 0.4)).unwrap();
        lines += &format!("{i}.png\n");
    }
    let manifest = dir.path().join("m.txt");
    std::fs::write(&manifest, lines).unwrap();
    let out = despeckle(&[
        "denoise",
        "--input",
        s(&manifest),
        "--out",
        s(&dir.path().join("o.png")),
    ]);
    failed_with(&out, "[align]");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(despeckle(&["denoise"]).status.code(), Some(2));
    assert_eq!(
        despeckle(&["align", "--input", "m.txt", "--report", "r.json", "--model", "shear"])
            .status
            .code(),
        Some(2)
    );
}
