use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
run_id = "cli"
seed = 3
k = 1
[dataset]
source = "synthetic"
train = 300
eval = 200
[[roster]]
kind = "mlp"
seed = 5
out_dim = 8
"#;

fn coopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopt")).args(args).output().unwrap()
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn run_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = coopt(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["targets.cptt", "metrics.jsonl", "probe.json", "config.toml"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let m = manifest(&a);
    let listed: Vec<&str> =
        m["artifacts"].as_array().unwrap().iter().map(|e| e["path"].as_str().unwrap()).collect();
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "manifest.json" {
            assert!(listed.contains(&name.as_str()), "{name} missing from manifest");
        }
    }
    let first = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for key in ["run_id", "round", "participant", "metric", "value"] {
        assert!(line.get(key).is_some(), "{key} missing in {line}");
    }
}

#[test]
fn seed_and_threads_flags_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &SMALL.replace("k = 1", "k = 3"));
    let out = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    assert!(coopt(&["run", "--config", &cfg, "--out", &out("serial")]).status.success());
    assert!(coopt(&["run", "--config", &cfg, "--out", &out("threaded"), "--threads", "3"]).status.success());
    assert!(coopt(&["run", "--config", &cfg, "--out", &out("reseeded"), "--seed", "11"]).status.success());
    let targets = |name: &str| fs::read(tmp.path().join(name).join("targets.cptt")).unwrap();
    assert_eq!(targets("serial"), targets("threaded"));
    assert_ne!(targets("serial"), targets("reseeded"));
    let o = coopt(&["run", "--config", &cfg, "--out", &out("zero"), "--threads", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &format!("shared_fraction = 0.0\n{SMALL}"));
    let o = coopt(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shared_fraction"));
}

#[test]
fn inspect_reads_headers_and_rejects_garbage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("o");
    assert!(coopt(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let o = coopt(&["inspect", out.join("targets.cptt").to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let header: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(header["header"]["kind"], "targets");
    assert_eq!(header["header"]["count"], 300);

    let bad = tmp.path().join("bad.cptd");
    fs::write(&bad, b"NOPE-not-a-shard").unwrap();
    let o = coopt(&["inspect", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn identical_priors_are_flagged_not_fatal() {
    // a noiseless oracle ignores quality and seed, so every graded level is the same prior
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &SMALL.replace(r#"kind = "mlp""#, r#"kind = "oracle""#).replace("out_dim = 8", "out_dim = 10"));
    let out = tmp.path().join("o");
    let o = coopt(&[
        "correlate-uniformity",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--levels",
        "0.2,0.4,0.6,0.8,1.0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate"));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["spearman"].is_null());
    assert!(summary["degenerate"].is_string());
    assert_eq!(fs::read_to_string(out.join("scatter.jsonl")).unwrap().lines().count(), 5);
}

#[test]
fn continuous_and_ablations_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &SMALL.replace("k = 1", "k = 2"));
    let out = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let o = coopt(&["continuous", "--config", &cfg, "--out", &out("c"), "--rounds", "3", "--upgrade-fraction", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rounds = fs::read_to_string(tmp.path().join("c/rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 3);
    let o = coopt(&["ablate-alignment", "--config", &cfg, "--out", &out("a")]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(tmp.path().join("a/results.jsonl")).unwrap().lines().count(), 4);
    let o = coopt(&["ablate-shared-size", "--config", &cfg, "--out", &out("s"), "--fractions", "0.05,0.2"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(tmp.path().join("s/results.jsonl")).unwrap().lines().count(), 2);
}
