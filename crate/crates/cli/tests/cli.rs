use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ballconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ballconv")).args(args).output().expect("binary runs")
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", out.to_str().unwrap()]);
    ballconv(&all)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or("").to_string()
}

#[test]
fn certify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run_in(dir.path(), &["certify", "--scenario", "polyak-demo", "--no-timestamp"]);
    assert_eq!(code(&ok), 0);
    let r = report(dir.path());
    assert_eq!(r["schema"], 1);
    assert_eq!(r["outcome"], "certificate");
    assert!((r["summary"]["eps0"].as_f64().unwrap() - 0.999 / 6.0).abs() < 1e-12);
    assert!(r.get("generated_at").is_none());

    let none = run_in(dir.path(), &["certify", "--scenario", "counterexample-parabola"]);
    assert_eq!(code(&none), 2);
    let r = report(dir.path());
    assert_eq!(r["outcome"], "no-certificate");
    assert!(r["generated_at"].is_string());
}

#[test]
fn verify_image_failure_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["verify-image", "--scenario", "counterexample-parabola", "--eps", "0.5", "--seed", "7"]);
    assert_eq!(code(&o), 3);
    assert_eq!(first_line(&dir.path().join("defect_curve.csv")), "eps,defect");
    assert_eq!(first_line(&dir.path().join("image_points.csv")), "x1,y1,y2");
    let side: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("image_points.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 7);
    assert_eq!(side["n_points"], 10_000);
}

#[test]
fn empty_eps_list_is_a_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["verify-image", "--scenario", "polyak-demo", "--eps", ""]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("defect_curve.csv")).unwrap(), "eps,defect\n");
}

#[test]
fn optimize_needs_a_cone() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["optimize", "--scenario", "polyak-demo"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cone"));
}

#[test]
fn optimize_writes_the_front() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["optimize", "--scenario", "disk-demo", "--no-timestamp"]);
    assert_eq!(code(&o), 0);
    assert_eq!(first_line(&dir.path().join("pareto_points.csv")), "y1,y2");
    let r = report(dir.path());
    assert_eq!(r["dominance_audit"]["dominators"], 0);
}

#[test]
fn regmod_refutes_the_product_level_map() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["regmod", "--scenario", "counterexample-y1y2"]);
    assert_eq!(code(&o), 2);
    assert_eq!(report(dir.path())["outcome"], "refuted");
}

#[test]
fn malformed_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.toml", "name = \"x\"\nx0 = [0.0\n"),
        ("unknown.toml", &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/polyak-demo.toml")).unwrap().replace("[sampler]", "[sampler]\nbogus = 1")),
        ("dims.toml", &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/polyak-demo.toml")).unwrap().replace("x0 = [0.0, 0.0]", "x0 = [0.0]")),
    ];
    for (name, text) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        let o = run_in(&dir.path().join("out"), &["certify", "--scenario", path.to_str().unwrap()]);
        assert_eq!(code(&o), 1, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let missing = run_in(dir.path(), &["certify", "--scenario", "no-such-scenario"]);
    assert_eq!(code(&missing), 1);
    let bad_eps = run_in(dir.path(), &["verify-image", "--scenario", "polyak-demo", "--eps", "0.1,abc"]);
    assert_eq!(code(&bad_eps), 1);
}
