#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use locust_cli::manifest::hash_file;
use locust_cli::synth::{write_scenario, Scenario, SynthOptions};

pub fn locust(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locust"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and returns its stdout.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = locust(dir, args);
    assert!(
        out.status.success(),
        "locust {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(dir: &Path, args: &[&str]) -> i32 {
    locust(dir, args).status.code().expect("exit code")
}

pub fn scenario(dir: &Path, scenario: Scenario, sites: usize, static_vars: usize, chip_size: usize) -> PathBuf {
    let opts = SynthOptions {
        scenario,
        sites: Some(sites),
        static_vars: Some(static_vars),
        chip_size: Some(chip_size),
        seed: 0,
    };
    write_scenario(dir, &opts).unwrap()
}

pub fn append(path: &Path, text: &str) {
    let mut f = fs::OpenOptions::new().append(true).open(path).unwrap();
    f.write_all(text.as_bytes()).unwrap();
}

/// Content hash of every file under `dir`, keyed by relative path.
pub fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(key, hash_file(&p).unwrap());
            }
        }
    }
    out
}
