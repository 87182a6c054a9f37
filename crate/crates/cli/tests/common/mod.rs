//! Helpers shared by the command-line integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Runs `regrank <command> --config <fixture config> --out <out> <extra...>` in process.
pub fn regrank(command: &str, out: &Path, extra: &[&str]) -> i32 {
    let config = fixture("config.json");
    let mut args: Vec<String> = vec!["regrank".into(), command.into(), "--config".into(), config.display().to_string()];
    args.push("--out".into());
    args.push(out.display().to_string());
    args.extend(extra.iter().map(|s| s.to_string()));
    regrank_cli::run(args)
}

/// index → retrieve → answer → evaluate, each expected to succeed.
pub fn full_pipeline(out: &Path, extra: &[&str]) {
    for command in ["index", "retrieve", "answer", "evaluate"] {
        assert_eq!(regrank(command, out, extra), 0, "{command} failed");
    }
}

/// Every file under `root` keyed by its relative path.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}
