use std::path::Path;
use std::process::Command;

use mdbd::harness::artifacts::*;
use mdbd::harness::{cmd_gen, cmd_run, cmd_verify, ExperimentConfig, RunSummary};
use mdbd::integrator::RunStatus;
use mdbd::oracle::OracleConfig;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.family.n_agents = 4;
    cfg.family.dim = 3;
    cfg.family.eq_rows = 1;
    cfg.family.seed = 5;
    cfg.integrator.horizon = 2.0;
    cfg.integrator.record_every = 250;
    cfg.oracle = Some(OracleConfig::default());
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdbd"))
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn run_writes_every_artifact_with_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let outcome = cmd_run(&cfg, dir.path()).unwrap();
    let hash = cfg.hash();
    let stamp = format!("# config_hash={hash} seed=5");

    for (file, header) in [
        (TRAJECTORY_FILE, TRAJECTORY_HEADER),
        (DIAGNOSTICS_FILE, DIAGNOSTICS_HEADER),
        (ERRORS_FILE, ERRORS_HEADER),
    ] {
        let text = read(dir.path(), file);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(stamp.as_str()), "{file}");
        assert_eq!(lines.next(), Some(header), "{file}");
    }
    for file in [INSTANCE_FILE, SADDLE_FILE, SUMMARY_FILE, TIMING_FILE] {
        let v: serde_json::Value = serde_json::from_str(&read(dir.path(), file)).unwrap();
        assert_eq!(v["config_hash"], hash.as_str(), "{file}");
        assert_eq!(v["seed"], 5, "{file}");
    }

    // 9 records at t = 0, 0.25, ..., 2; per record 4 agents × (3+1+1+1+1+3+1).
    let traj = read(dir.path(), TRAJECTORY_FILE);
    assert_eq!(csv_rows(&traj).count(), 9 * 4 * 11);
    let diag = read(dir.path(), DIAGNOSTICS_FILE);
    let rows: Vec<Vec<&str>> = csv_rows(&diag).collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[0][6], "", "no gap before any averaging");
    assert!(rows[8][6].parse::<f64>().unwrap() >= 0.0);

    let summary: RunSummary = read_json(&dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary, outcome.summary);
    assert_eq!(summary.status, RunStatus::Completed);
    assert_eq!(summary.steps, 2000);
    assert_eq!(summary.subgradient_digest.len(), 64);
}

#[test]
fn errors_decrease_over_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.integrator.horizon = 20.0;
    cfg.integrator.record_every = 5000;
    cmd_run(&cfg, dir.path()).unwrap();
    let text = read(dir.path(), ERRORS_FILE);
    let errs: Vec<f64> = csv_rows(&text).map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(errs.len(), 5);
    assert!(errs.last().unwrap() < &(0.1 * errs[0]), "{errs:?}");
}

#[test]
fn verify_passes_on_run_output_and_catches_tampering() {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&small_config(), dir.path()).unwrap();
    let instance: InstanceDoc = read_json(&dir.path().join(INSTANCE_FILE)).unwrap();
    let saddle: SaddleDoc = read_json(&dir.path().join(SADDLE_FILE)).unwrap();
    let report = cmd_verify(&instance, Some(&saddle));
    assert!(report.passed(), "{report}");
    for name in ["connectivity", "slater", "lambda_nonnegative", "kkt_residual", "saddle_inequalities"] {
        assert!(report.check(name).is_some(), "missing {name}");
    }

    let mut negative = saddle.clone();
    negative.saddle.z_star.lambda_mut()[0] = -0.5;
    let report = cmd_verify(&instance, Some(&negative));
    assert!(!report.check("lambda_nonnegative").unwrap().passed);
    assert!(!report.passed());

    let mut cut = instance.clone();
    cut.graph.edges.retain(|e| !(e.i == 0 || e.j == 0));
    let report = cmd_verify(&cut, Some(&saddle));
    assert!(!report.check("connectivity").unwrap().passed);

    let mut moved = saddle.clone();
    moved.saddle.z_star.x_mut()[0] += 0.05;
    moved.saddle.z_star.x_mut()[1] -= 0.05;
    let report = cmd_verify(&instance, Some(&moved));
    assert!(!report.check("kkt_residual").unwrap().passed);
}

#[test]
fn gen_writes_a_verifiable_instance() {
    let dir = tempfile::tempdir().unwrap();
    let doc = cmd_gen(&small_config(), dir.path()).unwrap();
    assert!(doc.slater.slack.unwrap() > 0.0);
    let back: InstanceDoc = read_json(&dir.path().join(INSTANCE_FILE)).unwrap();
    assert!(cmd_verify(&back, None).passed());
    assert_eq!(back.problem().unwrap().dims(), doc.problem().unwrap().dims());
}

#[test]
fn divergence_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.oracle = None;
    cfg.integrator.step = 3.0;
    cfg.integrator.horizon = 3000.0;
    cfg.integrator.record_every = 1;
    cfg.integrator.divergence_bound = 1e6;
    let outcome = cmd_run(&cfg, dir.path()).unwrap();
    assert!(outcome.diverged());
    let v: serde_json::Value = serde_json::from_str(&read(dir.path(), SUMMARY_FILE)).unwrap();
    assert_eq!(v["status"], "DIVERGED");
}

#[test]
fn cli_run_verify_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .args(["run", "--N", "4", "--n", "3", "--eq-rows", "1", "--seed", "5", "--h", "1e-3", "--T", "1", "--oracle"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let verify = bin().arg("verify").arg(&out).output().unwrap();
    assert!(verify.status.success());
    let text = String::from_utf8(verify.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");

    // Same flags, output directory taken from the environment.
    let env_out = dir.path().join("env");
    let status = bin()
        .args(["run", "--N", "4", "--n", "3", "--eq-rows", "1", "--seed", "5", "--h", "1e-3", "--T", "1", "--oracle"])
        .env(mdbd::harness::OUT_DIR_ENV, &env_out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&out, SUMMARY_FILE), read(&env_out, SUMMARY_FILE));

    let mut saddle: serde_json::Value = serde_json::from_str(&read(&out, SADDLE_FILE)).unwrap();
    saddle["saddle"]["z_star"]["blocks"][1][0] = serde_json::json!(-1.0);
    std::fs::write(out.join(SADDLE_FILE), saddle.to_string()).unwrap();
    let verify = bin().arg("verify").arg(out.join(INSTANCE_FILE)).output().unwrap();
    assert_eq!(verify.status.code(), Some(1));
    assert!(String::from_utf8(verify.stdout).unwrap().contains("FAIL lambda_nonnegative"));
}

#[test]
fn cli_rejects_bad_config_with_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"integrator\": {\n    \"horizon\": \"long\"\n  }\n}\n").unwrap();
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("integrator.horizon") && err.contains("line 3"), "{err}");
}

#[test]
fn cli_divergence_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("div.json");
    std::fs::write(
        &cfg,
        r#"{"family": {"n_agents": 3, "dim": 2, "eq_rows": 1},
            "integrator": {"step": 3.0, "horizon": 3000, "record_every": 1, "divergence_bound": 1e6}}"#,
    )
    .unwrap();
    let out = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("DIVERGED"));
}
