//! Run directories: every artifact of one invocation plus `manifest.json`.
//! The manifest is the only file carrying a timestamp or timings.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cdii_core::field::{write_grid_text, write_trace_csv, BoundaryTrace, ScalarField};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::CliError;

pub struct RunDir {
    pub path: PathBuf,
    files: Vec<String>,
}

fn out_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("writing {}: {e}", path.display()))
}

impl RunDir {
    /// Uses `explicit` as is, otherwise `<root>/<command>-<UTC timestamp>`
    /// with a numeric suffix on collision.
    pub fn create(
        root: &Path,
        explicit: Option<&Path>,
        command: &str,
        stamp: &DateTime<Utc>,
    ) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let base = root.join(format!("{command}-{}", stamp.format("%Y%m%dT%H%M%S%.3fZ")));
                let mut p = base.clone();
                let mut k = 1;
                while p.exists() {
                    p = PathBuf::from(format!("{}-{k}", base.display()));
                    k += 1;
                }
                p
            }
        };
        fs::create_dir_all(&path)
            .map_err(|e| CliError::Input(format!("output directory {} is not writable: {e}", path.display())))?;
        Ok(Self { path, files: Vec::new() })
    }

    pub fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> cdii_core::Result<()>,
    ) -> Result<(), CliError> {
        let p = self.path.join(name);
        let mut w = BufWriter::new(File::create(&p).map_err(|e| out_err(&p, e))?);
        body(&mut w).map_err(|e| out_err(&p, e))?;
        w.flush().map_err(|e| out_err(&p, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn grid(&mut self, name: &str, u: &ScalarField) -> Result<(), CliError> {
        self.write(name, |w| write_grid_text(u, w))
    }

    pub fn trace(&mut self, name: &str, f: &BoundaryTrace) -> Result<(), CliError> {
        self.write(name, |w| write_trace_csv(f, w))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::from)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn manifest(mut self, m: &Manifest) -> Result<PathBuf, CliError> {
        let mut files = std::mem::take(&mut self.files);
        files.sort();
        let mut v = serde_json::to_value(m).map_err(|e| CliError::Internal(e.to_string()))?;
        v["files"] = files.into();
        self.json("manifest.json", &v)?;
        Ok(self.path)
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub timestamp: String,
    pub elapsed_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<serde_json::Value>,
    pub config: serde_json::Value,
    pub exit_code: i32,
    pub status: String,
}

pub fn timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}
