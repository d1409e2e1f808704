use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rvm_cli::{run, Pipeline, RunOptions, Scenario};
use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn rvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvm")).args(args).output().unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn vacuum_run_has_zero_residuals() {
    let out = tempfile::tempdir().unwrap();
    let o = rvm(&[
        "run",
        "--scenario",
        scenario("vacuum.cfg").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["fields.csv", "radiation.csv", "ledger.json", "report.json", "report.txt"] {
        assert!(out.path().join(f).exists(), "missing {f}");
    }
    let r = report(out.path());
    assert_eq!(r["passed"], Value::Bool(true));
    let checks = r["checks"].as_array().unwrap();
    assert!(checks.len() >= 8);
    for c in checks {
        assert_eq!(c["value"].as_f64().unwrap(), 0.0, "{c}");
    }
    let ledger: Value = serde_json::from_str(&fs::read_to_string(out.path().join("ledger.json")).unwrap()).unwrap();
    assert_eq!(ledger["rvm-ledger"], 1);
    let csv = fs::read_to_string(out.path().join("fields.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,x3,E1,E2,E3,B1,B2,B3\n"));
}

#[test]
fn decreasing_ladder_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("vacuum.cfg"))
        .unwrap()
        .replace("r_ladder = [4.0, 8.0, 16.0]", "r_ladder = [16.0, 8.0, 4.0]");
    let path = dir.path().join("bad.cfg");
    fs::write(&path, text).unwrap();
    let o = rvm(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("energetics.r_ladder"), "{err}");
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn unknown_keys_and_bad_flags_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.cfg");
    fs::write(&path, "name = \"x\"\n[source]\nkind = \"vacuum\"\n[radiation]\nu_gird = [0.0]\n").unwrap();
    let o = rvm(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("u_gird"));

    let o = rvm(&["run", "--scenario", scenario("vacuum.cfg").to_str().unwrap(), "--pipeline", "fields,nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rvm(&["run", "--scenario", "/nonexistent/scenario.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evolve_needs_an_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let o = rvm(&[
        "run",
        "--scenario",
        scenario("vacuum.cfg").to_str().unwrap(),
        "--pipeline",
        "evolve",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pipelines"));
}

#[test]
fn scenario_files_round_trip() {
    for name in ["vacuum.cfg", "dipole.cfg", "blob.cfg", "two_body.cfg"] {
        let text = fs::read_to_string(scenario(name)).unwrap();
        let a = Scenario::from_toml(&text).unwrap();
        let once = a.to_toml();
        let b = Scenario::from_toml(&once).unwrap();
        assert_eq!(a, b, "{name}");
        assert_eq!(once, b.to_toml(), "{name}");
        let c = Scenario::from_json(&a.to_json()).unwrap();
        assert_eq!(a, c, "{name}");
    }
}

#[test]
fn json_mirror_runs_like_toml() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::from_toml(&fs::read_to_string(scenario("vacuum.cfg")).unwrap()).unwrap();
    let path = dir.path().join("vacuum.json");
    fs::write(&path, sc.to_json()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = rvm(&["run", "--scenario", path.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = rvm(&["run", "--scenario", scenario("vacuum.cfg").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
}

#[test]
fn empty_run_reports_no_pipelines() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::load(&scenario("blob.cfg")).unwrap();
    let opts = RunOptions {
        pipelines: Some(Vec::new()),
        out: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let outcome = run(sc, &opts).unwrap();
    assert!(outcome.passed());
    let r = report(dir.path());
    assert_eq!(r["note"], "no pipelines executed");
    assert_eq!(r["fields"]["samples"], 0);
    assert_eq!(r["checks"].as_array().unwrap().len(), 0);
    assert!(fs::read_to_string(dir.path().join("report.txt")).unwrap().contains("no pipelines executed"));
    assert!(!dir.path().join("fields.csv").exists());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let o = rvm(&[
            "run",
            "--scenario",
            scenario("blob.cfg").to_str().unwrap(),
            "--pipeline",
            "fields,radiation",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(
            ["report.json", "fields.csv", "radiation.csv"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn blob_matches_coulomb_and_keeps_its_mass() {
    let dir = tempfile::tempdir().unwrap();
    let o = rvm(&[
        "run",
        "--scenario",
        scenario("blob.cfg").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(dir.path().join("fields.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    // x = (8, 0, 0): E = Q/|x|² x̂, B = 0
    assert!((row[4] - 1.0 / 64.0).abs() < 1e-6 / 64.0);
    assert_eq!(&row[7..10], &[0.0, 0.0, 0.0]);
    let r = report(dir.path());
    let names: Vec<&str> = r["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"bondi_mass_spread"));
    assert!(names.contains(&"cone_identity"));
}

#[test]
fn tight_tolerances_fail_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = rvm(&[
        "run",
        "--scenario",
        scenario("blob.cfg").to_str().unwrap(),
        "--pipeline",
        "verify",
        "--tolerance-scale",
        "1e-300",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed"));
    assert_eq!(report(dir.path())["passed"], Value::Bool(false));
}

#[test]
fn two_body_evolution_writes_a_trajectory_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = rvm(&[
        "run",
        "--scenario",
        scenario("two_body.cfg").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let log = fs::read_to_string(dir.path().join("trajectory.txt")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("t species x1 x2 x3 p1 p2 p3"));
    // two particles at every level from t = 0 to t = 4 in steps of 0.1
    assert_eq!(lines.count(), 2 * 41);
    let r = report(dir.path());
    let slabs = r["evolve"]["slabs"].as_array().unwrap();
    assert_eq!(slabs.len(), 8);
    assert!(slabs.iter().all(|s| s["iterations"].as_u64().unwrap() <= 8));
    assert_eq!(r["evolve"]["past_continuation"], "ballistic");
}

#[test]
fn dipole_verification_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = rvm(&[
        "run",
        "--scenario",
        scenario("dipole.cfg").to_str().unwrap(),
        "--pipeline",
        "verify",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = report(dir.path());
    let check = |name: &str| {
        r["checks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["name"] == name)
            .unwrap_or_else(|| panic!("no check {name}"))["value"]
            .as_f64()
            .unwrap()
    };
    assert!(check("mass_loss") < 0.02);
    assert!(check("mn_identities") < 1e-8);
    assert!(check("radiation_path_b") < 1e-8);
    assert!(check("bondi_non_increasing") == 0.0);
}

#[test]
fn pipeline_list_parsing() {
    assert_eq!(
        Pipeline::parse_list("fields, verify").unwrap(),
        vec![Pipeline::Fields, Pipeline::Verify]
    );
    assert!(Pipeline::parse_list("none").unwrap().is_empty());
    assert!(Pipeline::parse_list("field").is_err());
}
