//! Smoke tests of the command-line front end: exit codes, artifact
//! files, and the pretrain → extract → evaluate → adv-sweep chain.

use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"
[task]
num_classes = 3
image_shape = [1, 8, 8]
victim_per_class = 6
proxy_per_class = 8
test_per_class = 4

[victim]
arch = "mlp-s"
latent_dim = 8
epochs = 10

[pretrain]
arch = "mlp-s"
latent_dim = 8
epochs = 1
batch_n = 4

[extraction]
itera = 2
epochs = 5
batch_size = 4

[campaign]
methods = ["rs", "bae"]
budgets = [8]
seeds = [0]
epsilons = [0.09]
"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

fn prextract(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prextract"))
        .args(args)
        .env("PREXTRACT_THREADS", "1")
        .output()
        .unwrap()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_exits_zero() {
    assert_success(&prextract(&["--help"]));
}

#[test]
fn invalid_config_exits_one_with_named_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    // budget not divisible by itera
    std::fs::write(&path, "[extraction]\nitera = 3\n[campaign]\nbudgets = [100]\n").unwrap();
    let out = prextract(&["campaign", "--config", path.to_str().unwrap(), "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("budget"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_exits_nonzero() {
    let out = prextract(&["campaign", "--config", "/nonexistent.toml", "--out", "/tmp/x"]);
    assert!(!out.status.success());
}

#[test]
fn full_command_chain_produces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let enc = dir.path().join("enc.pxcp");
    assert_success(&prextract(&[
        "pretrain", "--config", cfg, "--method", "dae", "--out",
        enc.to_str().unwrap(),
    ]));
    assert!(enc.is_file());
    assert!(dir.path().join("enc.pxcp.meta.json").is_file());

    let run_dir = dir.path().join("run");
    assert_success(&prextract(&[
        "extract", "--config", cfg, "--method", "dae", "--budget", "8", "--out",
        run_dir.to_str().unwrap(),
    ]));
    let substitute = run_dir.join("substitute.pxcp");
    assert!(substitute.is_file());
    let queries = std::fs::read_to_string(run_dir.join("queries.csv")).unwrap();
    assert!(queries.starts_with("round,sample_id"));
    assert_eq!(queries.lines().count(), 1 + 8, "one row per charged query");

    let eval = prextract(&[
        "evaluate", "--config", cfg, "--model", substitute.to_str().unwrap(),
    ]);
    assert_success(&eval);
    let report: serde_json::Value =
        serde_json::from_slice(&eval.stdout).expect("evaluate emits JSON");
    assert!(report["fidelity"].as_f64().is_some());

    let sweep_dir = dir.path().join("sweep");
    assert_success(&prextract(&[
        "adv-sweep", "--config", cfg, "--model", substitute.to_str().unwrap(),
        "--out", sweep_dir.to_str().unwrap(),
    ]));
    let sweep = std::fs::read_to_string(sweep_dir.join("asr_sweep.csv")).unwrap();
    assert!(sweep.starts_with("epsilon,asr"));
}

#[test]
fn campaign_and_plot_data_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("campaign");
    assert_success(&prextract(&[
        "campaign", "--config", cfg.to_str().unwrap(), "--out",
        out_dir.to_str().unwrap(),
    ]));
    for name in ["summary.csv", "asr.csv", "fidelity_vs_budget.csv", "asr_vs_epsilon.csv"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    // 2 methods x 1 budget x 1 seed
    assert_eq!(summary.lines().count(), 1 + 2, "summary: {summary}");

    assert_success(&prextract(&["plot-data", "--out", out_dir.to_str().unwrap()]));
}
