use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vkmeans(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vkmeans")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
name = "small"
k = 3
rounds = 3
seeds = [0, 1]
networks = ["LAN1000"]

[dataset]
kind = "synthetic"
n = 300
d = 2
cluster_std = 0.1
seed = 2

[protocol]
slot_count = 1024
"#;

#[test]
fn run_writes_report_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = vkmeans(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--trajectory", "--transcript"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["k"], 3);
    assert_eq!(report["seeds"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 4 * 3);

    let transcript = out.join("transcript.json");
    let est = dir.path().join("est.json");
    let res = vkmeans(&["estimate", "--transcript", transcript.to_str().unwrap(), "--network", "LAN1000", "--network", "ccWAN50", "--out", est.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let est: serde_json::Value = serde_json::from_str(&fs::read_to_string(est).unwrap()).unwrap();
    let secs: Vec<f64> = est.as_array().unwrap().iter().map(|e| e["seconds"].as_f64().unwrap()).collect();
    assert!(secs[0] > 0.0 && secs[1] > secs[0]);
}

#[test]
fn estimate_from_config_plan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let res = vkmeans(&["estimate", "--config", &cfg, "--compute-seconds", "1.5"]);
    assert!(res.status.success());
    assert_eq!(String::from_utf8_lossy(&res.stdout).lines().count(), 10);
}

#[test]
fn gen_and_baseline_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("blobs.csv");
    let res = vkmeans(&["gen", "--n", "200", "--k", "2", "--d", "2", "--std", "0.05", "--seed", "4", "--out", csv.to_str().unwrap()]);
    assert!(res.status.success());
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 200);
    let body = format!(
        "k = 2\n[dataset]\nkind = \"csv\"\npath = {:?}\nlabel_column = 2\n",
        csv.to_str().unwrap()
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("base");
    let res = vkmeans(&["baseline", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["mean_accuracy"].as_f64().unwrap() > 0.9);
}

#[test]
fn invalid_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for body in [
        SMALL.replace("k = 3", "k = 1"),
        SMALL.replace("cluster_std", "cluster_sd"),
        SMALL.replace("LAN1000", "nowhere"),
        "k = 3".to_string(),
    ] {
        let cfg = write_config(dir.path(), &body);
        let res = vkmeans(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(!res.status.success(), "{body}");
        assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    }
    assert!(!vkmeans(&["run", "--config", "/nonexistent.toml", "--out", "x"]).status.success());
    assert!(!vkmeans(&["estimate"]).status.success());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let res = vkmeans(&["estimate", "--config", path.to_str().unwrap(), "--network", "LAN1000"]);
        assert!(res.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&res.stderr));
    }
}
