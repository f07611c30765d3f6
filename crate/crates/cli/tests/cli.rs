use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trilevel(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trilevel"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bounds_table_matches_reference_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = trilevel(dir.path(), &["bounds", "--n", "10,30,100"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for total in ["47.2473", "75.0267", "129.3000"] {
        assert!(text.contains(total), "{text}");
    }
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bounds.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    assert_eq!(rows[1]["n_agents"], 30);
}

#[test]
fn empty_swarm_list_prints_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = trilevel(dir.path(), &["bounds", "--n", ""]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn sensitivity_output_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = trilevel(a.path(), &["sensitivity"]);
    let ob = trilevel(b.path(), &["sensitivity"]);
    assert_eq!(oa.status.code(), Some(0));
    assert_eq!(oa.stdout, ob.stdout);
    assert!(stdout(&oa).contains("150.0534"));
    assert_eq!(
        fs::read(a.path().join("sensitivity.json")).unwrap(),
        fs::read(b.path().join("sensitivity.json")).unwrap()
    );
}

#[test]
fn counterexamples_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = trilevel(dir.path(), &["--set", "n_agents=8", "counterexample", "no_clamp", "--duration", "10"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("bound violated as expected"));
    let o = trilevel(dir.path(), &["--set", "n_agents=6", "counterexample", "--scenario", "delta_zero", "--duration", "100"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("3.500000e0"));
    let o = trilevel(dir.path(), &["--set", "n_agents=6", "counterexample", "baseline", "--duration", "100"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = trilevel(dir.path(), &["--set", "n_agents=6", "verify", "--seeds", "3", "--duration", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("3 / 3 runs pass"));
    let o = trilevel(dir.path(), &["verify", "--seeds", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = trilevel(dir.path(), &["--set", "n_agents=4", "verify", "--scenario", "delta_zero", "--seeds", "2", "--duration", "100"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = trilevel(dir.path(), &["--seed", "3", "--set", "n_agents=4", "simulate", "--duration", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let run = dir.path().join("baseline-seed3");
    let steps = fs::read_to_string(run.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().next(), Some("t,agent_id,step_norm,clamped"));
    assert_eq!(steps.lines().count(), 1 + 1000 * 4);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["metadata"]["seed"], 3);
    assert_eq!(meta["config"]["n_agents"], 4);
}

#[test]
fn config_file_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n_agents = 30\n\neta2 = [1]\n").unwrap();
    let o = trilevel(dir.path(), &["--config", cfg.to_str().unwrap(), "bounds"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "n_agents = 10\n").unwrap();
    let o = trilevel(dir.path(), &["--config", cfg.to_str().unwrap(), "--set", "eta3=2e-5", "bounds", "--n", "30"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("12.0000"), "{}", stdout(&o));
}

#[test]
fn conditions_report_violations() {
    let dir = tempfile::tempdir().unwrap();
    let ok = trilevel(dir.path(), &["conditions"]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = trilevel(dir.path(), &["--set", "eta1=0.01", "conditions"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("violated"));
}

#[test]
fn unknown_names_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(trilevel(dir.path(), &["counterexample", "nope"]).status.code(), Some(1));
    assert_eq!(trilevel(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(trilevel(dir.path(), &["--set", "nope=1", "bounds"]).status.code(), Some(1));
}
