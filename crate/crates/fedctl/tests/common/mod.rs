#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fedctl::config::ExperimentConfig;

/// A cabin2 experiment under `out` with short training budgets.
pub fn quick_config(out: &Path, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        baseline_epochs: 3,
        out: out.to_path_buf(),
        ..Default::default()
    };
    c.federation.max_rounds = 2;
    c.federation.local_epochs = 2;
    c.federation.timeout_secs = 120;
    c.resolve().unwrap()
}

/// Relative path to file contents, for every file below `dir`.
pub fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
