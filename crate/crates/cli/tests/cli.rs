use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shapeharmony::{shapes, write_obj, PointMap};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapeharmony"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let a = dir.join("a.obj");
    let b = dir.join("b.obj");
    write_obj(&a, &shapes::blob(2)).unwrap();
    write_obj(&b, &shapes::bend(&shapes::blob(2), 0.0, 1.5, 0.5)).unwrap();
    (a, b)
}

const FAST: &[&str] = &[
    "--k",
    "20",
    "--match-iters",
    "5",
    "--interp-iters",
    "20",
    "--tta-iters",
    "50",
    "--steps",
    "2",
];

#[test]
fn dump_config_prints_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--dump-config", "--k", "30"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["k"], 30);
    assert_eq!(v["match"]["temperature"], 0.07);
    assert_eq!(v["tta"]["lambda_d"], 0.1);
    assert_eq!(v["tta"]["iters"], 2000);
}

#[test]
fn usage_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = fixture(dir.path());
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    for args in [
        vec!["match"],
        vec!["match", "--mesh-x", a, "--mesh-y", b, "--k", "2"],
        vec!["match", "--mesh-x", a, "--mesh-y", b, "--match-iters", "0"],
        vec!["eval", "--mesh-x", a, "--mesh-y", b],
        vec!["frobnicate"],
    ] {
        let out = run(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(!dir.path().join("out").exists());
    std::fs::write(dir.path().join("bad.json"), r#"{"kk": 1}"#).unwrap();
    assert_eq!(
        run(dir.path(), &["--config", "bad.json", "match"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_mesh_is_a_domain_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["match", "--mesh-x", "nope.obj", "--mesh-y", "nope.obj"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.obj"));
}

#[test]
fn stages_chain_through_the_output_tree() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = fixture(dir.path());
    let mut args = vec![
        "--mesh-x",
        a.to_str().unwrap(),
        "--mesh-y",
        b.to_str().unwrap(),
        "--gt",
        "identity",
    ];
    args.extend_from_slice(FAST);
    for stage in ["match", "interpolate", "tta", "eval", "ssm"] {
        let mut a = vec![stage];
        a.extend_from_slice(&args);
        let out = run(dir.path(), &a);
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = dir.path().join("out");
    let n = shapes::blob(2).n_vertices();
    for f in [
        "match/map_xy.txt",
        "match/map_yx.txt",
        "match/baseline_xy.txt",
        "match/c_xy.fmap",
        "match/report.json",
        "interpolate/manifest.json",
        "interpolate/x/frame_0002.obj",
        "interpolate/y/frame_0002.obj",
        "tta/field.sfld",
        "tta/map_xy.txt",
        "tta/adapted/frame_0002.obj",
        "eval/report.json",
        "eval/pck_final.csv",
        "eval/conformal_wks_baseline.csv",
        "ssm/model.ssm",
        "ssm/metrics.json",
        "ssm/mean.obj",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("interpolate/x/frame_0003.obj").exists());
    PointMap::read_hard(out.join("tta/map_xy.txt"), n).unwrap();

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("interpolate/manifest.json")).unwrap())
            .unwrap();
    let trace: Vec<f64> = serde_json::from_value(manifest["trace"].clone()).unwrap();
    let mut best = f64::INFINITY;
    for t in &trace {
        best = best.min(*t);
    }
    assert_eq!(manifest["best"]["total"].as_f64().unwrap(), best);

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("eval/report.json")).unwrap()).unwrap();
    let names: Vec<&str> = report["maps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["final", "match", "wks_baseline"]);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = fixture(dir.path());
    let n = shapes::blob(2).n_vertices();
    let m = dir.path().join("out/match");
    std::fs::create_dir_all(&m).unwrap();
    PointMap::identity(n)
        .write_hard(m.join("map_xy.txt"))
        .unwrap();
    let out = run(
        dir.path(),
        &[
            "eval",
            "--mesh-x",
            a.to_str().unwrap(),
            "--mesh-y",
            b.to_str().unwrap(),
            "--gt",
            "identity",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/eval/report.json")).unwrap())
            .unwrap();
    let m = &report["maps"][0];
    assert_eq!(m["name"], "match");
    assert_eq!(m["mean_geo_err"].as_f64(), Some(0.0));
    assert_eq!(m["auc"].as_f64(), Some(1.0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("geo err (x100)"));
}

#[test]
fn ssm_on_a_rank_one_family() {
    let dir = tempfile::tempdir().unwrap();
    let base = shapes::icosphere(1);
    let mut args = vec!["ssm".to_string()];
    for (i, c) in [-0.2, 0.1, 0.3].iter().enumerate() {
        let p = dir.path().join(format!("s{i}.obj"));
        write_obj(
            &p,
            &base.map_vertices(|v| nalgebra::Vector3::new(v.x * (1.0 + c), v.y, v.z)),
        )
        .unwrap();
        args.push("--shape".into());
        args.push(p.to_str().unwrap().into());
    }
    let out = bin().current_dir(dir.path()).args(&args).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/ssm/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["modes"], 1);
    let g = metrics["generality"][0][1].as_f64().unwrap();
    assert!(g <= 1e-8, "{g}");
    assert!(dir.path().join("out/ssm/mode_0_plus.obj").is_file());
}
