mod common;

use std::path::Path;
use std::process::{Command, Output};

use neuropipe::geometry::{euler_to_transform, RigidTransform};
use neuropipe::masking::LabelTable;
use neuropipe::metrics::EvaluationRecord;
use neuropipe::nifti::{read_volume, write_volume};
use neuropipe::BinaryMask;

fn np(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuropipe")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = np(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn transforms_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = euler_to_transform([0.1, 0.0, 0.0], [1.0, 2.0, 3.0], [0.0; 3]);
    let b = RigidTransform::translation([-1.0, 0.0, 0.5]);
    a.write(d.join("a.toml")).unwrap();
    b.write(d.join("b.toml")).unwrap();
    ok(&["compose", s(&d.join("a.toml")), s(&d.join("b.toml")), "-o", s(&d.join("ab.toml"))]);
    let ab = RigidTransform::read(d.join("ab.toml")).unwrap();
    assert!(ab.max_abs_diff(&neuropipe::compose(&a, &b)) < 1e-12);

    let grid = common::target_grid();
    let image = common::study_phantom(1.0).sample(&grid, &RigidTransform::identity()).unwrap();
    let img = d.join("img.nii.gz");
    write_volume(&image, &img, true).unwrap();
    ok(&["extract-mask", s(&img), "-o", s(&d.join("mask.nii.gz")), "--threshold", "40"]);
    let mask = BinaryMask::read(d.join("mask.nii.gz")).unwrap();
    assert!(mask.count() > 0 && mask.count() < mask.bits().len());
    ok(&["apply-mask", s(&img), s(&d.join("mask.nii.gz")), "-o", s(&d.join("brain.nii.gz"))]);
    let brain = read_volume(d.join("brain.nii.gz")).unwrap();
    assert!(brain.data().iter().zip(mask.bits()).all(|(&v, &m)| m || v == 0.0));

    ok(&["resample", s(&img), "-o", s(&d.join("moved.nii.gz")), "-t", s(&d.join("ab.toml")), "--like", s(&img)]);
    assert_eq!(read_volume(d.join("moved.nii.gz")).unwrap().dims(), grid.dims);

    let json = ok(&["validate-alignment", s(&img), s(&d.join("brain.nii.gz"))]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["pearson"], 1.0);
    assert_eq!(v["psnr_db"], 200.0);
}

#[test]
fn evaluate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let table = LabelTable::default();
    let grid = common::target_grid();
    let truth = common::tumour_labels(&grid, [30.0; 3], 8.0, &table);
    let pred = common::tumour_labels(&grid, [31.5, 30.0, 30.0], 7.0, &table);
    write_volume(&truth.to_volume(), d.join("truth.nii.gz"), true).unwrap();
    write_volume(&pred.to_volume(), d.join("pred.nii.gz"), true).unwrap();
    let csv = d.join("scores.csv");
    for subject in ["a", "b"] {
        let json = ok(&[
            "evaluate",
            s(&d.join("pred.nii.gz")),
            s(&d.join("truth.nii.gz")),
            "--subject",
            subject,
            "--method",
            "bet",
            "--csv",
            s(&csv),
        ]);
        let rec: EvaluationRecord = serde_json::from_str(&json).unwrap();
        assert!(rec.dice.wt > 0.5 && rec.dice.wt < 1.0);
    }
    let recs = EvaluationRecord::read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(recs.len(), 2);

    ok(&["report", s(&csv), "-o", s(&d.join("report"))]);
    assert!(d.join("report/summary.json").exists());
    assert!(d.join("report/plot_data.json").exists());

    ok(&["derive-regions", s(&d.join("truth.nii.gz")), "--out-dir", s(&d.join("regions"))]);
    let wt = BinaryMask::read(d.join("regions/wt.nii.gz")).unwrap();
    let at = BinaryMask::read(d.join("regions/at.nii.gz")).unwrap();
    assert!(at.is_subset_of(&wt));

    // Label 3 is a usage/input error, not a stage failure.
    let mut labels = truth.labels().to_vec();
    labels[0] = 3;
    let bad = neuropipe::nifti::Volume::new(truth.geometry().clone(), labels.iter().map(|&l| l as f64).collect(), neuropipe::DType::UInt8).unwrap();
    write_volume(&bad, d.join("bad.nii.gz"), true).unwrap();
    let out = np(&["derive-regions", s(&d.join("bad.nii.gz")), "--out-dir", s(&d.join("r2"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(np(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(np(&["compose", "/nonexistent/a.toml", "/nonexistent/b.toml", "-o", "/tmp/x.toml"]).status.code(), Some(1));
    assert_eq!(np(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let study = common::build_study(dir.path(), "mode = \"none\"", 0.0, 1);
    let text = std::fs::read_to_string(&study.config).unwrap();
    let seg = format!("{}/tools/seg.sh", dir.path().display());
    let failing = text.replace(&seg, "sh -c 'exit 4'");
    assert_ne!(failing, text);
    std::fs::write(&study.config, failing).unwrap();
    let out = np(&["run", s(&study.config)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("segmentation"));
}
