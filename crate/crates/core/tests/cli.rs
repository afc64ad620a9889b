use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llm-routing")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n_requests": 20, "instances": 2, "routing": "min_min"}"#);
    let out = dir.path().join("out");
    let o = cli(&["run", "--config", &cfg, "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.json", "requests.csv", "timeseries.csv"] {
        assert!(out.join("seed-4").join(f).exists(), "{f}");
    }
}

#[test]
fn invalid_config_fails_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"instances": 0}"#);
    let o = cli(&["run", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("instances"));
    let o = cli(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn matrix_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n_requests": 30, "instances": 2,
            "matrix": {"batching": ["fcfs", "bin_packing", "least_work_left"],
                       "routing": ["round_robin", "decode_balancer", "dedicated_small_large"]}}"#,
    );
    let out = dir.path().join("m");
    let o = cli(&["matrix", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("matrix.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 9);
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n_requests": 30, "instances": 2, "seeds": [5, 6],
            "agent": {"batch_size": 32, "replay_capacity": 1000},
            "baselines": ["round_robin", "jsq"]}"#,
    );
    let out = dir.path().join("rl");
    let o = cli(&["train", "--config", &cfg, "--episodes", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("agent.bin").exists() && out.join("agent.json").exists());
    assert_eq!(fs::read_to_string(out.join("training.csv")).unwrap().lines().count(), 3);
    let o = cli(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Agent plus two baselines on two seeds.
    assert_eq!(fs::read_to_string(out.join("evaluation.csv")).unwrap().lines().count(), 1 + 6);
}

#[test]
fn partition_refuses_large_sets() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["partition", "--requests", "15", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("14"));
    let o = cli(&["partition", "--requests", "4", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(dir.path().join("partition.json").exists());
}

#[test]
fn calibrate_fits_profile() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("lat.csv");
    let mut text = String::from("phase,batch_tokens,kv_tokens,latency_s\n");
    for (bt, kv) in [(100, 0), (800, 3000), (2000, 500), (50, 9000)] {
        text += &format!("prefill,{bt},{kv},{}\n", 0.03 + 3e-4 * bt as f64 + 2e-6 * kv as f64);
    }
    for kv in [0, 2000, 8000, 15000] {
        text += &format!("decode,0,{kv},{}\n", 0.015 + 2e-6 * kv as f64);
    }
    fs::write(&csv, text).unwrap();
    let o = cli(&["calibrate", "--input", csv.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("profile.json")).unwrap()).unwrap();
    assert!((p["decode_time_base"].as_f64().unwrap() - 0.015).abs() < 1e-9);
}
