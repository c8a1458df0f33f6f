//! `cdii`: forward solves, least-gradient reconstruction, level-set
//! diagnostics and stability sweeps from the command line.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input, 3 checks
//! failed or partial result.

mod args;
mod commands;
mod config;
mod run;

use std::ffi::OsString;
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, Parser};

use crate::args::{Cli, Command};
use crate::run::{timestamp, Manifest, RunDir};

pub enum CliError {
    Input(String),
    Internal(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Input(m) | Self::Internal(m) => f.write_str(m),
        }
    }
}

impl From<cdii_core::Error> for CliError {
    fn from(e: cdii_core::Error) -> Self {
        use cdii_core::Error as E;
        match e {
            E::LinearSolve { .. } | E::LgpNotConverged(_) | E::Io(_) => Self::Internal(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }
}

pub enum Outcome {
    Pass,
    Checks(String),
}

const SUBCOMMANDS: [&str; 6] = ["forward", "lgp", "reconstruct", "sweep", "levelsets", "verify"];

/// Splices config-file values in right after the subcommand name.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some((pos, Some(path))) = config::locate(&argv, &SUBCOMMANDS) else {
        return Ok(argv);
    };
    let cmd = Cli::command();
    let name = argv[pos].to_str().unwrap_or_default();
    let sub = cmd.find_subcommand(name).ok_or_else(|| CliError::Internal(format!("no subcommand {name}")))?;
    let extra = config::config_args(&path, sub)?;
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

fn dispatch(cmd: &Command, run: &mut RunDir) -> Result<(Outcome, Option<serde_json::Value>), CliError> {
    let plain = |r: Result<Outcome, CliError>| r.map(|o| (o, None));
    match cmd {
        Command::Forward(a) => plain(commands::forward(a, run)),
        Command::Lgp(a) => plain(commands::lgp(a, run)),
        Command::Reconstruct(a) => plain(commands::reconstruct(a, run)),
        Command::Sweep(a) => plain(commands::sweep(a, run)),
        Command::Levelsets(a) => plain(commands::levelsets(a, run)),
        Command::Verify(_) => commands::verify(run).map(|(o, t)| (o, Some(t))),
    }
}

fn config_value(cmd: &Command) -> serde_json::Value {
    let v = match cmd {
        Command::Forward(a) => serde_json::to_value(a),
        Command::Lgp(a) => serde_json::to_value(a),
        Command::Reconstruct(a) => serde_json::to_value(a),
        Command::Sweep(a) => serde_json::to_value(a),
        Command::Levelsets(a) => serde_json::to_value(a),
        Command::Verify(a) => serde_json::to_value(a),
    };
    v.unwrap_or(serde_json::Value::Null)
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let started = Instant::now();
    let stamp = chrono::Utc::now();
    let name = cli.command.name();
    let mut run = match RunDir::create(&cli.out, cli.run_dir.as_deref(), name, &stamp) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let (code, status, timings) = match dispatch(&cli.command, &mut run) {
        Ok((Outcome::Pass, t)) => (0, "ok".to_string(), t),
        Ok((Outcome::Checks(m), t)) => {
            eprintln!("checks failed: {m}");
            (3, m, t)
        }
        Err(e) => {
            eprintln!("error: {e}");
            (if matches!(e, CliError::Input(_)) { 2 } else { 1 }, e.to_string(), None)
        }
    };
    let manifest = Manifest {
        tool: "cdii",
        version: env!("CARGO_PKG_VERSION"),
        command: name.to_string(),
        timestamp: timestamp(&stamp),
        elapsed_s: started.elapsed().as_secs_f64(),
        timings,
        config: config_value(&cli.command),
        exit_code: code,
        status,
    };
    match run.manifest(&manifest) {
        Ok(path) => println!("run directory: {}", path.display()),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    ExitCode::from(code as u8)
}
