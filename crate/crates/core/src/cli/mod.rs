//! Subcommand definitions and shared plumbing.
//!
//! Configuration precedence is CLI flag > config-file entry > built-in
//! default. Config files are plain `key = value` lines with `#` comments,
//! keys matching the long flag names. Every run writes the resolved
//! configuration next to its outputs, and re-running from that file
//! reproduces all non-timing outputs.

mod bench_cmd;
mod closure_cmd;
mod sample_cmd;
mod solve_cmd;
mod train_cmd;

use clap::{Parser, Subcommand};
use mnkit::error::{Error, Result};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "mnkit",
    version,
    about = "Minimal-entropy moment closure toolkit: Newton and neural closures in a kinetic finite-volume solver"
)]
pub struct Cli {
    /// Plain-text key=value config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled training dataset.
    Sample(sample_cmd::SampleArgs),
    /// Train the convex surrogate on a dataset.
    Train(train_cmd::TrainArgs),
    /// Evaluate the closure for given moment vectors.
    Closure(closure_cmd::ClosureArgs),
    /// Run a transport test case.
    Solve(solve_cmd::SolveArgs),
    /// Time Newton against the surrogate on synthetic populations.
    Bench(bench_cmd::BenchArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    let file_cfg = load_config_file(cli.config.as_deref())?;
    match cli.command {
        Command::Sample(args) => sample_cmd::run(args, &file_cfg),
        Command::Train(args) => train_cmd::run(args, &file_cfg),
        Command::Closure(args) => closure_cmd::run(args, &file_cfg),
        Command::Solve(args) => solve_cmd::run(args, &file_cfg),
        Command::Bench(args) => bench_cmd::run(args, &file_cfg),
    }
}

pub type FileConfig = HashMap<String, String>;

fn load_config_file(path: Option<&Path>) -> Result<FileConfig> {
    let mut map = HashMap::new();
    let Some(path) = path else {
        return Ok(map);
    };
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: display,
                line: lineno + 1,
                message: format!("expected key = value, got {line:?}"),
            });
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// CLI flag if set, else config-file entry, else default.
pub fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    file_cfg: &FileConfig,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(raw) = file_cfg.get(key) {
        return raw
            .parse()
            .map_err(|_| Error::Config(format!("bad value for {key}: {raw:?}")));
    }
    Ok(default)
}

/// Like [`resolve`] but without a default; `None` when absent everywhere.
pub fn resolve_opt<T: std::str::FromStr>(
    flag: Option<T>,
    file_cfg: &FileConfig,
    key: &str,
) -> Result<Option<T>> {
    if let Some(v) = flag {
        return Ok(Some(v));
    }
    match file_cfg.get(key) {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value for {key}: {raw:?}"))),
        None => Ok(None),
    }
}

pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

/// Write the resolved key=value configuration next to the outputs.
pub fn write_resolved_config(dir: &Path, entries: &[(&str, String)]) -> Result<()> {
    let path = dir.join("config.resolved");
    let mut text = String::from("# resolved configuration\n");
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn parse_dimension(d: usize) -> Result<mnkit::moments::Dimension> {
    match d {
        1 => Ok(mnkit::moments::Dimension::One),
        2 => Ok(mnkit::moments::Dimension::Two),
        other => Err(Error::Config(format!("dimension must be 1 or 2, got {other}"))),
    }
}
