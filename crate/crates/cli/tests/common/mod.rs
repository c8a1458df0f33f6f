//! Shared helpers for driving the `cdii` binary.

#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;

use cdii_core::field::{read_grid_text, ScalarField};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
    pub dir: PathBuf,
}

/// Runs `cdii <args> --run-dir <root>/<name>`.
pub fn cdii(root: &Path, name: &str, args: &[&str]) -> Run {
    let dir = root.join(name);
    let out = Command::new(env!("CARGO_BIN_EXE_cdii"))
        .args(args)
        .arg("--run-dir")
        .arg(&dir)
        .env_remove("CDII_OUT")
        .output()
        .expect("spawn cdii");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        dir,
    }
}

pub fn grid(path: impl AsRef<Path>) -> ScalarField {
    read_grid_text(BufReader::new(File::open(path.as_ref()).expect("open grid"))).expect("parse grid")
}

pub fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_reader(File::open(path.as_ref()).expect("open json")).expect("parse json")
}

/// Manifest without the fields that legitimately differ between runs.
pub fn stable_manifest(dir: &Path) -> serde_json::Value {
    let mut m = json(dir.join("manifest.json"));
    let o = m.as_object_mut().expect("manifest object");
    for k in ["timestamp", "elapsed_s", "timings"] {
        o.remove(k);
    }
    m
}

/// Every file other than the manifest must be byte-identical.
pub fn same_artifacts(a: &Path, b: &Path) -> Result<(), String> {
    let names = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    if names(a) != names(b) {
        return Err(format!("file lists differ: {:?} vs {:?}", names(a), names(b)));
    }
    for n in names(a) {
        if n == "manifest.json" {
            continue;
        }
        if std::fs::read(a.join(&n)).unwrap() != std::fs::read(b.join(&n)).unwrap() {
            return Err(format!("{} differs", n.to_string_lossy()));
        }
    }
    if stable_manifest(a) != stable_manifest(b) {
        return Err("manifests differ beyond timestamps".into());
    }
    Ok(())
}
