use std::path::Path;
use std::process::{Command, Output};

fn rollgeo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rollgeo"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn catalog_pendulum_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = rollgeo(&["run", "sphere-on-plane-pendulum", "--output-dir", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/sphere-on-plane-pendulum.summary.json")).unwrap();
    let s: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(s["status"], "ok");
    assert_eq!(s["trajectory"], "sphere-on-plane-pendulum.csv");
    assert!(s["scenario_hash"].as_str().unwrap().len() == 64);
    assert!(s["version"].is_string() && s["tolerances"].is_object());
    let check = s["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "pendulum_residual")
        .unwrap();
    assert!(check["value"].as_f64().unwrap() <= 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("out/sphere-on-plane-pendulum.csv")).unwrap();
    assert!(csv.starts_with("t,x0,x1,xh0,xh1,theta,"));
}

#[test]
fn malformed_file_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\n  \"name\": \"bad\",\n  \"kind\": \"geodesic\"\n  \"T\": 1\n}").unwrap();
    let o = rollgeo(&["run", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn unknown_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("typo.toml"),
        "name = \"typo\"\nkind = \"geodesic\"\nT = 1.0\ntol = 1e-9\nspeeed = 2.0\n",
    )
    .unwrap();
    let o = rollgeo(&["run", "typo.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("speeed"), "{}", stderr(&o));
}

#[test]
fn equal_curvature_pendulum_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = r#"{
  "name": "flat-pair",
  "kind": "pendulum-2d",
  "M": "euclidean(2)",
  "Mh": "euclidean(2)",
  "x": [0.0, 0.0],
  "xh": [0.0, 0.0],
  "u": [1.0, 0.0],
  "v": [0.0, 1.0],
  "Lambda": [0.0, 0.5, -0.5, 0.0],
  "T": 5.0,
  "tol": 1e-10
}"#;
    std::fs::write(dir.path().join("flat.json"), scenario).unwrap();
    let o = rollgeo(&["run", "flat.json"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bracket generating"), "{}", stderr(&o));
}

#[test]
fn violated_tolerance_exits_4_and_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let show = rollgeo(&["catalog", "show", "paraboloid-on-plane"], dir.path());
    let mut s: serde_json::Value = serde_json::from_slice(&show.stdout).unwrap();
    s["tolerances"] = serde_json::json!({ "speed_drift": 1e-30 });
    s["T"] = serde_json::json!(1.0);
    std::fs::write(dir.path().join("strict.json"), s.to_string()).unwrap();
    let o = rollgeo(&["run", "strict.json"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(dir.path().join("paraboloid-on-plane.csv").exists());
    let text = std::fs::read_to_string(dir.path().join("paraboloid-on-plane.summary.json")).unwrap();
    assert!(text.contains("\"violated\""));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("sphere-on-plane-bvp", "csv"), ("sphere-frame-bundle-lift", "json")] {
        let mut bytes = Vec::new();
        for out in ["a", "b"] {
            let o = rollgeo(
                &["run", name, "--T", "1.5", "--seed", "7", "--format", format, "--output-dir", out],
                dir.path(),
            );
            assert!(o.status.success(), "{}", stderr(&o));
            let mut files: Vec<_> = std::fs::read_dir(dir.path().join(out))
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            files.sort();
            bytes.push(files.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
            bytes.last_mut().unwrap().push(o.stdout);
        }
        assert_eq!(bytes[0], bytes[1], "{name}");
        std::fs::remove_dir_all(dir.path().join("a")).unwrap();
        std::fs::remove_dir_all(dir.path().join("b")).unwrap();
    }
}

#[test]
fn verify_rejects_unknown_suite() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["", "no-such-suite"] {
        let o = rollgeo(&["verify", name], dir.path());
        assert_ne!(o.status.code(), Some(0));
        let e = stderr(&o);
        assert!(e.contains("theorem-2-4") && e.contains("first-integrals"), "{e}");
    }
}

#[test]
fn verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = rollgeo(&["verify", "first-integrals", "--T", "2", "--output-dir", "v"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("PASS C2"), "{out}");
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v/first-integrals.report.json")).unwrap()).unwrap();
    assert_eq!(r["pass"], true);
    assert!(dir.path().join("v/sphere-on-plane/sphere-on-plane.csv").exists());
}

#[test]
fn catalog_list_and_show() {
    let dir = tempfile::tempdir().unwrap();
    let o = rollgeo(&["catalog", "list"], dir.path());
    assert!(o.status.success());
    let list = String::from_utf8(o.stdout).unwrap();
    for name in ["heisenberg-lift", "sphere-on-plane-pendulum", "paraboloid-rn-roll", "sphere-on-plane-bvp"] {
        assert!(list.contains(name), "{list}");
    }
    let o = rollgeo(&["catalog", "show", "sphere-great-circle"], dir.path());
    assert!(o.status.success());
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["kind"], "develop");
    let o = rollgeo(&["catalog", "show", "nothing"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}
