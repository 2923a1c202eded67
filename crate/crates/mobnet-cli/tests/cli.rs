//! End-to-end checks of the binary: artifact layout, manifest
//! round-trip, determinism, and config rejection paths.

use std::path::Path;
use std::process::{Command, Output};

fn mobnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn sim_config(out: &Path) -> String {
    format!(
        r#"
        kind = "simulate"
        seed = 42
        output = "{}"
        [network]
        lambda = [0.5, 0.5]
        mu = [1.0, 1.0]
        [q]
        rows = [[0.0, 1.0], [1.0, 0.0]]
        [experiment]
        x0 = [3, 2]
        horizon = 2.0
        paths = 2
        "#,
        out.display()
    )
}

#[test]
fn run_writes_manifest_csvs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("artifacts");
    let cfg = write_config(dir.path(), "sim.toml", &sim_config(&out));
    let res = mobnet(&["run", &cfg]);
    assert!(res.status.success(), "{res:?}");

    let csv = std::fs::read_to_string(out.join("trajectory_0000.csv")).unwrap();
    assert!(csv.starts_with("time,event_kind,from_node,to_node,x_1,x_2"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["hard_pass"], serde_json::Value::Bool(true));

    // the manifest echoes a config that parses back to the original
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], serde_json::json!(42));
    assert_eq!(manifest["config"]["kind"], serde_json::json!("simulate"));
    assert_eq!(
        manifest["config"]["experiment"]["x0"],
        serde_json::json!([3, 2])
    );
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg_a = write_config(dir.path(), "a.toml", &sim_config(&out_a));
    let cfg_b = write_config(dir.path(), "b.toml", &sim_config(&out_b));
    assert!(mobnet(&["run", &cfg_a]).status.success());
    assert!(mobnet(&["run", &cfg_b]).status.success());
    for name in ["trajectory_0000.csv", "trajectory_0001.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical seeded runs");
    }
}

#[test]
fn triple_representation_has_the_enlarged_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = sim_config(&out).replace(
        "paths = 2",
        "paths = 1\nrepresentation = \"triple\"",
    );
    let cfg = write_config(dir.path(), "t.toml", &body);
    assert!(mobnet(&["run", &cfg]).status.success());
    let csv = std::fs::read_to_string(out.join("triple_0000.csv")).unwrap();
    assert!(csv.starts_with(
        "time,event_kind,from_node,to_node,x_1,x_2,y_1,y_2,z_1,z_2,N_lambda,N_mu"
    ));
}

#[test]
fn contradictory_regime_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = format!(
        r#"
        kind = "fluid"
        seed = 1
        output = "{}"
        [network]
        lambda = [0.5, 0.5]
        mu = [0.5, 0.5]
        [q]
        rows = [[0.0, 1.0], [1.0, 0.0]]
        [plan]
        ladder = [50]
        replicas = 2
        horizon = 1.0
        initial = {{ proportional = [0.5, 0.5] }}
        [experiment]
        regime = "subcritical"
        window = [0.1, 1.0]
        "#,
        out.display()
    );
    let cfg = write_config(dir.path(), "f.toml", &body);
    let res = mobnet(&["run", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("regime"), "{err}");
    // nothing was written: validation precedes artifacts
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = sim_config(&out) + "\n[bogus]\nkey = 1\n";
    let cfg = write_config(dir.path(), "u.toml", &body);
    let res = mobnet(&["run", &cfg]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn nonirreducible_rates_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = sim_config(&out).replace("[[0.0, 1.0], [1.0, 0.0]]", "[[0.0, 1.0], [0.0, 0.0]]");
    let cfg = write_config(dir.path(), "n.toml", &body);
    let res = mobnet(&["run", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("irreducible"), "{err}");
}

#[test]
fn describe_prints_the_derived_quantities() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = format!(
        r#"
        kind = "ergodicity"
        seed = 1
        output = "{}"
        [network]
        lambda = [0.5, 0.5]
        mu = [1.0, 1.0]
        [q]
        rows = [[0.0, 1.0], [1.0, 0.0]]
        [plan]
        ladder = [100]
        replicas = 2
        horizon = 1.0
        initial = {{ corner = 0 }}
        delta = {{ power-law = 0.25 }}
        [experiment]
        a = 1.0
        "#,
        out.display()
    );
    let cfg = write_config(dir.path(), "d.toml", &body);
    let res = mobnet(&["describe", &cfg]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("theta:      2.000000"), "{text}");
    assert!(text.contains("t_a:        1"), "{text}");
    assert!(text.contains("100, 0.316228"), "{text}");
    // describe never simulates or writes artifacts
    assert!(!out.exists());
}
