#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::Path;
use std::process::{Command, Output};

pub fn anchortraj<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anchortraj")).args(args).env_remove("RUST_LOG").output().expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// `simulate --seed <seed>` into `dir`, panicking on failure.
pub fn simulate(dir: &Path, seed: u64, extra: &[&str]) {
    let seed = seed.to_string();
    let mut args = vec!["simulate", "--seed", &seed, "--out-dir", path(dir)];
    args.extend_from_slice(extra);
    let out = anchortraj(&args);
    assert!(out.status.success(), "simulate failed: {}", stderr(&out));
}
