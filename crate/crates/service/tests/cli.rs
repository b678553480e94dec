use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn conductor(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_conductor"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "conductor {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn generate(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    conductor(&["generate", "--voxels", "32", "--seed", "7", "--out", d]);
    format!("{d}/dataset.json")
}

#[test]
fn render_writes_png_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = generate(dir.path());
    let out = dir.path().join("f.png");
    let params = dir.path().join("p.json");
    std::fs::write(
        &params,
        r#"{"sparsify": {"mode": "depth"}, "blend": {"w_color": 0.3}}"#,
    )
    .unwrap();
    conductor(&[
        "render",
        "--dataset",
        &dataset,
        "--params",
        params.to_str().unwrap(),
        "--size",
        "40x30",
        "--out",
        out.to_str().unwrap(),
    ]);
    let png = std::fs::read(&out).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["groups"].as_array().unwrap().len(), 9);
    assert_eq!(report["report"]["groups"].as_array().unwrap().len(), 9);
}

#[test]
fn render_rejects_unknown_params() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = generate(dir.path());
    let params = dir.path().join("p.json");
    std::fs::write(&params, r#"{"sparsfy": {}}"#).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_conductor"))
        .args([
            "render",
            "--dataset",
            &dataset,
            "--params",
            params.to_str().unwrap(),
            "--out",
        ])
        .arg(dir.path().join("x.png"))
        .output()
        .unwrap()
        .status;
    assert!(!status.success());
}

#[test]
fn generate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path());
    generate(b.path());
    for f in ["dataset.json", "dataset.raw.f32", "dataset.seg.u32"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn bench_reports_every_stage() {
    let out = conductor(&["bench", "--voxels", "32", "--size", "32x32"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    for stage in [
        "linearize",
        "assign",
        "aggregate",
        "sparsify",
        "mask_build",
        "render",
    ] {
        assert!(v[stage].as_f64().unwrap() >= 0.0, "{stage}");
    }
    assert!(v["render"].as_f64().unwrap() > 0.0);
    assert_eq!(v["frame"], serde_json::json!([32, 32]));
}
