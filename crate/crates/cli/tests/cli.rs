use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gaborface::image::{save_pgm, Image};
use gaborface::preprocess::{synthetic_eye_template, template_size_for};
use gaborface::synth::{subject_image, synthetic_face};
use tempfile::TempDir;

fn gfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfr")).args(args).output().expect("gfr runs")
}

fn gfr_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfr")).args(args).env(key, value).output().expect("gfr runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// ORL-style tree: `root/s<i>/<j>.pgm`, already cropped.
fn dataset(root: &Path, subjects: u64, per_subject: u64) -> PathBuf {
    let dir = root.join("faces");
    for i in 0..subjects {
        let sd = dir.join(format!("s{}", i + 1));
        fs::create_dir_all(&sd).unwrap();
        for j in 0..per_subject {
            save_pgm(&subject_image(i, j, 128), &sd.join(format!("{}.pgm", j + 1))).unwrap();
        }
    }
    dir
}

#[test]
fn build_bank_writes_curve_and_summary() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bank");
    let o = gfr(&["build-bank", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("variance.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 40);
    let last: f64 = rows[39].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(last, 1.0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bank.json")).unwrap()).unwrap();
    assert_eq!(summary["k"], 25);

    let o = gfr(&["build-bank", "--out", s(&out), "--select-k", "20"]);
    assert!(o.status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bank.json")).unwrap()).unwrap();
    let v = summary["retained_variance"].as_f64().unwrap();
    assert!((0.85..=0.97).contains(&v), "{v}");

    let o = gfr(&["build-bank", "--out", s(&out), "--select-variance", "0.9801"]);
    assert!(o.status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bank.json")).unwrap()).unwrap();
    let k = summary["k"].as_u64().unwrap();
    assert!((26..=32).contains(&k), "{k}");
}

#[test]
fn preprocess_dumps_intermediates() {
    let tmp = TempDir::new().unwrap();
    let t = synthetic_eye_template(template_size_for(40.0));
    let face = synthetic_face(140, 150, (50, 60), (90, 62), &t);
    let img = tmp.path().join("face.pgm");
    save_pgm(&face, &img).unwrap();

    let out = tmp.path().join("pre");
    let o = gfr(&["preprocess", s(&img), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["eyes.pgm", "crop.pgm", "normalized.pgm", "asr.pgm", "roi.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let out2 = tmp.path().join("pre2");
    let o = gfr(&["preprocess", s(&img), "--skip-detect", "--out", s(&out2)]);
    assert!(o.status.success());
    let files: Vec<_> = fs::read_dir(&out2).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert!(out2.join("asr.pgm").exists());

    let blank = tmp.path().join("blank.pgm");
    save_pgm(&Image::from_fn(120, 120, |_, _| 0.5), &blank).unwrap();
    let o = gfr(&["preprocess", s(&blank), "--out", s(&tmp.path().join("pre3"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("eyes not found"), "{}", stderr(&o));
}

#[test]
fn enroll_identify_evaluate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 4, 10);
    let model = tmp.path().join("model.gfr");
    let o = gfr(&["enroll", "--manifest", s(&data), "--model", s(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let probe = data.join("s3").join("4.pgm");
    let o = gfr(&["identify", "--model", s(&model), "--skip-detect", s(&probe)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let mut parts = line.split_whitespace();
    assert_eq!(parts.next(), Some("s3"));
    let d: f64 = parts.next().unwrap().parse().unwrap();
    assert!(d.abs() < 1e-9, "{d}");

    let out = tmp.path().join("eval");
    let o = gfr(&["evaluate", "--manifest", s(&data), "--seeds", "1,2,3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("evaluate.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert_eq!(report["aggregate"]["runs"], 3);
    assert!(report["aggregate"]["mean"].as_f64().unwrap() > 0.5);
    for seed in [1, 2, 3] {
        assert!(out.join(format!("confusion_seed{seed}.csv")).exists());
    }

    // a saved model scores 1.0 on its own training images
    let out2 = tmp.path().join("eval_model");
    let o = gfr(&["evaluate", "--manifest", s(&data), "--model", s(&model), "--out", s(&out2)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out2.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rank1_rate"], 1.0);
}

#[test]
fn sweep_grid_handling() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(tmp.path(), 4, 10);
    let grid = tmp.path().join("grid.json");
    fs::write(&grid, r#"{"k": [20, 25, 40, 25]}"#).unwrap();
    let out = tmp.path().join("sweep");
    let o = gfr(&["sweep", "--manifest", s(&data), "--grid", s(&grid), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("duplicate value"));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("probe_features_ms") && lines[0].contains("total_ms"));
    assert!(lines[1].starts_with("20,"));
    assert!(lines[3].starts_with("40,") && lines[3].ends_with(",ok"));

    fs::write(&grid, "{}").unwrap();
    let o = gfr(&["sweep", "--manifest", s(&data), "--grid", s(&grid), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn config_and_environment_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"pipeline": {"bank": {"gama": 0.5}}}"#).unwrap();
    let o = gfr(&["build-bank", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("gama"), "{}", stderr(&o));

    fs::write(&cfg, r#"{"pipeline": {"selection": {"k": 12}}, "out_dir": "OUT"}"#.replace("OUT", s(&tmp.path().join("y"))))
        .unwrap();
    let o = gfr_env(&["build-bank", "--config", s(&cfg)], "GFR_THREADS", "1");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("selected 12 of 40"));

    let o = gfr_env(&["build-bank", "--out", s(&tmp.path().join("z"))], "GFR_THREADS", "0");
    assert!(!o.status.success());
}
