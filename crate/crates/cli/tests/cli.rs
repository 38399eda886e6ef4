use std::path::Path;
use std::process::{Command, Output};

fn nfs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfs"))
        .args(args)
        .env_remove("NFS_OUT_DIR")
        .output()
        .unwrap()
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), "[model]\nwidth = 3\n");
    let out = nfs(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.width"));
}

#[test]
fn missing_data_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), "[data]\npath = \"nowhere\"\n");
    let out = nfs(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn generated_graph_trains_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("graph");
    let small = "[sbm]\nn_nodes = 40\nn_noise = 4\n[model]\nhidden_dim = 4\n[train]\nepochs = 3\n";
    let cfg = write(&dir.path().join("gen.toml"), small);
    assert!(nfs(&["gen-sbm", "--config", &cfg, "--seed", "2", "--out", graph.to_str().unwrap()]).status.success());
    for f in ["edges.tsv", "features.csv", "labels.csv", "splits.csv"] {
        assert!(graph.join(f).exists(), "{f}");
    }
    let cfg = write(
        &dir.path().join("train.toml"),
        &format!("[data]\npath = \"graph\"\n{}", &small[small.find("[model]").unwrap()..]),
    );
    let out_dir = dir.path().join("run");
    let out = nfs(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let epochs = std::fs::read_to_string(out_dir.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 4);
    assert!(out_dir.join("model.json").exists());
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), "[bounds]\nn_instances = 2\nn_perms = 1\n");
    let out_dir = dir.path().join("env-out");
    let status = Command::new(env!("CARGO_BIN_EXE_nfs"))
        .args(["bound-check", "--config", &cfg])
        .env("NFS_OUT_DIR", &out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_dir.join("bounds.csv").exists());
}
