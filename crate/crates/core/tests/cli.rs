use std::path::Path;
use std::process::{Command, Output};

use kinetic_market::io::{read_metrics, METRICS_HEADER, SNAPSHOT_HEADER};
use kinetic_market::run::RunConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kinetic-market"));
    c.env_remove("KINETIC_MARKET_OUT");
    c
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn single_step_writes_one_row_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = exec(&["run", "--gamma", "0", "--steps", "1", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let branch = out.join("gamma_0");
    let text = std::fs::read_to_string(branch.join("grid_metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split(',').count(), 9);
    let snap = std::fs::read_to_string(branch.join("grid_snapshot_t000001.csv")).unwrap();
    assert!(snap.starts_with(&format!("{SNAPSHOT_HEADER}\n")));
    assert!(branch.join("grid_lorenz_t000001.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["code_version"].as_str().unwrap().starts_with("kinetic-market"));
    assert!(manifest["rng_algorithm"].as_str().unwrap().contains("ChaCha8"));
    assert_eq!(manifest["config"]["n_steps"], 1);
}

#[test]
fn invalid_gamma_names_field() {
    let o = exec(&["run", "--gamma", "1.5", "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma_list"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gamma_list = [0.2, 7.0]\n");
    let o = exec(&["run", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma_list"));
}

#[test]
fn env_var_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from_env");
    let o = bin()
        .args(["run", "--steps", "1"])
        .env("KINETIC_MARKET_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("gamma_0").join("grid_metrics.csv").exists());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n_steps = 5\nseed = 3\ninit = \"normal\"\n");
    let o = exec(&["run", "--config", path(&cfg), "--steps", "9", "--print-config"]);
    assert!(o.status.success());
    let echoed = RunConfig::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(echoed.n_steps, 9);
    assert_eq!(echoed.seed, 3);
    assert_eq!(echoed.init, kinetic_market::agents::InitKind::Normal);
}

#[test]
fn agent_checkpoint_continues_stream() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mode = \"agents\"\nn_steps = 40\nsample_every = 10\ncheckpoint_every = 20\nr_agents = 500\nseed = 11\n",
    );
    let full = dir.path().join("full");
    assert!(exec(&["run", "--config", path(&cfg), "--out", path(&full)]).status.success());
    let resumed = dir.path().join("resumed");
    let ck = full.join("gamma_0").join("checkpoint_t000020.json");
    let o = exec(&["restore", "--from", path(&ck), "--steps", "20", "--out", path(&resumed)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["agents_metrics.csv", "agents_ensemble_t000040.csv", "agents_snapshot_t000030.csv"] {
        let a = std::fs::read(full.join("gamma_0").join(f)).unwrap();
        let b = std::fs::read(resumed.join("gamma_0").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = exec(&["run", "--steps", "4", "--checkpoint-every", "2", "--out", path(&out)]);
    assert!(o.status.success());
    let ck = out.join("gamma_0").join("checkpoint_t000002.json");
    let text = std::fs::read_to_string(&ck).unwrap();

    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    let o = exec(&["restore", "--from", path(&truncated), "--steps", "2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));

    let wrong = dir.path().join("wrong.json");
    std::fs::write(&wrong, text.replacen("\"version\": 1", "\"version\": 99", 1)).unwrap();
    let o = exec(&["restore", "--from", path(&wrong), "--steps", "2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("format 99"));
}

#[test]
fn failing_branch_leaves_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n_steps = 400\nsample_every = 1\nmax_bins = 400\n");
    let out = dir.path().join("out");
    let o = exec(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let branch = out.join("gamma_0");
    let err = std::fs::read_to_string(branch.join("error.txt")).unwrap();
    assert!(err.contains("overflow"), "{err}");
    let rows = read_metrics(&branch.join("grid_metrics.csv")).unwrap();
    assert!(!rows.is_empty() && rows.len() < 400);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("overflow"));
}

/// Grid and agents side by side for two gammas, with a checkpoint at t = 400.
#[test]
fn both_modes_and_grid_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mode = \"both\"\ngamma_list = [0.0, 1.0]\nn_steps = 800\nsample_every = 100\ncheckpoint_every = 400\nr_agents = 10000\n",
    );
    let full = dir.path().join("full");
    let o = exec(&["run", "--config", path(&cfg), "--out", path(&full)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for g in ["gamma_0", "gamma_1"] {
        for kind in ["grid", "agents"] {
            let rows = read_metrics(&full.join(g).join(format!("{kind}_metrics.csv"))).unwrap();
            assert_eq!(rows.len(), 8, "{g} {kind}");
        }
    }
    let grid = read_metrics(&full.join("gamma_0/grid_metrics.csv")).unwrap();
    let agents = read_metrics(&full.join("gamma_0/agents_metrics.csv")).unwrap();
    let gap = (grid[7].gini - agents[7].gini).abs();
    assert!(gap < 0.05, "Gini gap {gap}");

    let resumed = dir.path().join("resumed");
    let ck = full.join("gamma_0").join("checkpoint_t000400.json");
    let o = exec(&["restore", "--from", path(&ck), "--steps", "400", "--out", path(&resumed)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["grid_metrics.csv", "agents_metrics.csv", "grid_snapshot_t000800.csv"] {
        let a = std::fs::read(full.join("gamma_0").join(f)).unwrap();
        let b = std::fs::read(resumed.join("gamma_0").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
