use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 4
snapshot_every = 20
[dataset]
n = 200
n_test = 100
dim = 3
classes = 3
seed = 4
[noise]
kind = "symmetric"
rate = 0.3
seed = 4
[method]
kind = "proselflc"
at = true
temperature = 0.5
[model]
hidden_dim = 6
[optim]
lr0 = 0.1
batch_size = 32
total_iters = 60
[sweep]
growth = [16.0, 8.0]
temperature = [1.0, 0.5]
"#;

fn selflc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selflc")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_data_and_run_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = dir.path().join("data");
    let o = selflc(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(data.join("data.csv")).unwrap().lines().count(), 201);

    let out = dir.path().join("run");
    let o = selflc(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resolved = fs::read_to_string(out.join("resolved_config.json")).unwrap();
    assert!(resolved.contains("\"seed\": 9"));
    for f in ["corruption.csv", "dynamics.csv", "final_metrics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_and_compare_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = selflc(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 5);

    let out = dir.path().join("schemes");
    let o = selflc(&["compare-schemes", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("schemes.csv")).unwrap().lines().count(), 5);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("batch_size = 32", "batch_size = -1");
    let cfg = write_config(dir.path(), &bad);
    let o = selflc(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("optim.batch_size"), "{}", stderr(&o));

    let missing = dir.path().join("nope.toml");
    let o = selflc(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = selflc(&["run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let blocked = dir.path().join("blocked");
    fs::write(&blocked, "").unwrap();
    let o = selflc(&["run", "--config", &cfg, "--out", blocked.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let logits = dir.path().join("bad.csv");
    fs::write(&logits, "z_0,z_1,label\n1,2,0\n1,2\n").unwrap();
    let o = selflc(&["audit", "--input", logits.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains(":3:"), "{}", stderr(&o));
}

#[test]
fn audit_prints_a_row_per_temperature_and_mode() {
    let dir = tempfile::tempdir().unwrap();
    let logits = dir.path().join("logits.csv");
    fs::write(&logits, "z_0,z_1,z_2,label\n4,0,0,0\n0,4,0,0\n0,0,4,2\n").unwrap();
    let out = dir.path().join("audit");
    let o = selflc(&[
        "audit", "--input", logits.to_str().unwrap(), "--mode", "top", "--m", "5",
        "--temps", "1,2,4", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("audit.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("T,mode,ece,gsce,accuracy"));
    assert_eq!(table.lines().count(), 4);
    assert!(out.join("bins_top_T4.csv").exists());
}
