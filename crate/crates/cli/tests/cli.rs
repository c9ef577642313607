use std::path::Path;
use std::process::{Command, Output};

fn histloss(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histloss"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HISTLOSS_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.in.json");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "dataset": {"source": {"type": "synthetic", "kind": "sine", "n": 200, "d": 1, "noise_std": 0.05}},
  "train": {"epochs": 3}
}"#;

#[test]
fn bias_sim_writes_requested_rows_and_passes_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = histloss(&["bias-sim", "--points", "100", "--check-bounds", "--out", "b"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max |bias|"), "{stdout}");
    let samples = std::fs::read_to_string(dir.path().join("b/bias_samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 101);
    assert!(samples.starts_with("offset,bias"));
    for f in ["bias_sigma.csv", "bias_padding.csv", "half_width.csv"] {
        assert!(dir.path().join("b").join(f).exists(), "{f}");
    }
}

#[test]
fn train_runs_with_seed_and_runs_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = histloss(&["train", "--config", &cfg, "--seed", "4", "--runs", "2", "--out", "t"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"], 2);
    assert!(summary["test_mae"]["mean"].as_f64().unwrap() > 0.0);
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t/config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 4);
    assert!(dir.path().join("t/run_1/metrics.jsonl").exists());
}

#[test]
fn repeated_train_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for out in ["a", "b"] {
        assert!(histloss(&["train", "--config", &cfg, "--out", out], dir.path()).status.success());
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/run_0/metrics.jsonl"), read("b/run_0/metrics.jsonl"));
}

#[test]
fn output_directory_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_histloss"))
        .args(["train", "--config", &cfg])
        .current_dir(dir.path())
        .env("HISTLOSS_OUT", "from-env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from-env/summary.json").exists());
}

#[test]
fn study_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = histloss(&["study", "multitask", "--config", &cfg, "--out", "s"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s/multitask.csv")).unwrap();
    assert!(csv.starts_with("variant,lambda,run,train_mae"));
    assert_eq!(csv.lines().count(), 1 + 1 + 3);
}

#[test]
fn invalid_input_exits_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), r#"{"train": {"epochs": 3, "learning_rate": 1}}"#);
    let out = histloss(&["train", "--config", &bad, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let out = histloss(&["study", "nonsense"], dir.path());
    assert!(!out.status.success());

    // Padding that leaves no room for bins is a contract violation.
    let bad = write_config(dir.path(), r#"{"train": {"grid": {"k": 10, "sigma_w": 2, "psi_sigma": 3}}}"#);
    let out = histloss(&["train", "--config", &bad, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("psi_sigma"));
}

#[test]
fn missing_csv_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"dataset": {"source": {"type": "csv", "path": "nope.csv"}}}"#);
    let out = histloss(&["train", "--config", &cfg, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn trains_from_a_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("x1,x2,y\n");
    for i in 0..100 {
        let (a, b) = (i as f64 / 50.0 - 1.0, ((i * 37) % 100) as f64 / 100.0);
        text += &format!("{a},{b},{}\n", 2.0 * a - b);
    }
    std::fs::write(dir.path().join("d.csv"), text).unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"dataset": {"source": {"type": "csv", "path": "d.csv", "has_header": true}}, "train": {"epochs": 2, "loss": {"kind": "l2"}}}"#,
    );
    let out = histloss(&["train", "--config", &cfg, "--out", "c"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
