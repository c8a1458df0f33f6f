//! TOML config files. Keys are long option names (`_` or `-`), optionally
//! grouped in tables such as `[bounds]` or `[solver]`; tables are only
//! for readability and are flattened. The file's values are spliced into
//! the argument list right after the subcommand, so explicit flags, which
//! come later, win.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Command};

use crate::CliError;

fn flatten(table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        match v {
            toml::Value::Table(t) => flatten(t, out),
            _ => out.push((k.replace('_', "-"), v.clone())),
        }
    }
}

fn scalar(key: &str, v: &toml::Value) -> Result<String, CliError> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Array(items) => {
            items.iter().map(|i| scalar(key, i)).collect::<Result<Vec<_>, _>>().map(|v| v.join(","))
        }
        _ => Err(CliError::Input(format!("config key '{key}': unsupported value {v}"))),
    }
}

/// Converts a config file into `--key=value` arguments for `sub`.
pub fn config_args(path: &Path, sub: &Command) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    flatten(&table, &mut pairs);
    let mut out = Vec::new();
    for (key, value) in pairs {
        let arg =
            sub.get_arguments().find(|a| a.get_long() == Some(key.as_str()) && key != "config").ok_or_else(|| {
                CliError::Input(format!("config {}: unknown key '{key}' for '{}'", path.display(), sub.get_name()))
            })?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                toml::Value::Boolean(true) => out.push(OsString::from(format!("--{key}"))),
                toml::Value::Boolean(false) => {}
                _ => return Err(CliError::Input(format!("config key '{key}' must be a boolean"))),
            }
        } else {
            out.push(OsString::from(format!("--{key}={}", scalar(&key, &value)?)));
        }
    }
    Ok(out)
}

/// Finds the subcommand position and the `--config` path in a raw argument list.
pub fn locate(argv: &[OsString], names: &[&str]) -> Option<(usize, Option<PathBuf>)> {
    let pos = argv.iter().skip(1).position(|a| a.to_str().is_some_and(|s| names.contains(&s)))? + 1;
    let mut path = None;
    let mut it = argv[pos + 1..].iter();
    while let Some(a) = it.next() {
        let Some(s) = a.to_str() else { continue };
        if s == "--" {
            break;
        }
        if s == "--config" {
            path = it.next().map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    Some((pos, path))
}
