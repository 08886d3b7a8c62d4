#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small enough that a few epochs take well under a second.
pub const TINY_CONFIG: &str = "\
# test-sized network
epochs = 2
batch_size = 4
feature_dim = 4
conv_kernels = 5,3
conv_channels = 3,4
conv_pools = 4,4
attention_dim = 3
reg_hidden = 4
cls_hidden = 3
disc_hidden = 5
";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/probe")
}

pub fn cabp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cabp")).args(args).output().expect("spawn cabp")
}

/// Runs `cabp`, panicking with its stderr on failure.
pub fn cabp_ok(args: &[&str]) -> Output {
    let out = cabp(args);
    assert!(out.status.success(), "cabp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// A synthetic dataset, split plan and tiny config under `dir`.
pub struct Workspace {
    pub data: String,
    pub split: String,
    pub config: String,
}

pub fn workspace(dir: &Path, subjects: usize) -> Workspace {
    let data = dir.join("data");
    let data = data.to_str().unwrap().to_string();
    let n = subjects.to_string();
    cabp_ok(&["synth", "--subjects", &n, "--seed", "5", "--fs", "25", "--duration", "30", "--out", &data]);
    let split = dir.join("split.txt").to_str().unwrap().to_string();
    cabp_ok(&["split", "--manifest", &data, "--seed", "1", "--folds", "3", "--out", &split]);
    let config = write(&dir.join("tiny.cfg"), TINY_CONFIG);
    Workspace { data, split, config }
}
