//! Config-file expansion and the per-run record written next to every output.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

pub const SUBCOMMANDS: [&str; 7] = ["gen", "train", "eval", "rollout", "soh", "bench", "plot"];
pub const RUN_FILE: &str = "run.json";

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn flags_from(config: &serde_json::Map<String, Value>) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in config {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => out.extend([flag.into(), n.to_string().into()]),
            Value::String(s) => out.extend([flag.into(), s.into()]),
            Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|v| match v {
                        Value::Number(n) => Ok(n.to_string()),
                        Value::String(s) => Ok(s.clone()),
                        other => bail!("config key `{key}`: unsupported list item {other}"),
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.extend([flag.into(), parts.join(",").into()]);
            }
            Value::Object(_) => bail!("config key `{key}`: nested objects are not supported"),
        }
    }
    Ok(out)
}

/// Inserts the flags of a `--config` JSON file right after the subcommand, so
/// flags given on the command line (which come later) override them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(map) = value else {
        bail!("config {} must be a JSON object", path.display());
    };
    let flags = flags_from(&map)?;
    let Some(pos) = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    command_line: Vec<String>,
    threads: usize,
    config: &'a C,
    status: &'a str,
    error: Option<String>,
    elapsed_seconds: f64,
}

/// Writes `run.json` when created and again when finished.
pub struct Run<'a, C: Serialize> {
    dir: PathBuf,
    subcommand: &'a str,
    config: &'a C,
    threads: usize,
    started: Instant,
}

impl<'a, C: Serialize> Run<'a, C> {
    pub fn start(dir: &Path, subcommand: &'a str, config: &'a C, threads: usize) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let run = Self {
            dir: dir.to_path_buf(),
            subcommand,
            config,
            threads,
            started: Instant::now(),
        };
        run.write("running", None)?;
        Ok(run)
    }

    fn write(&self, status: &str, error: Option<String>) -> Result<()> {
        let record = RunRecord {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            command_line: std::env::args().collect(),
            threads: self.threads,
            config: self.config,
            status,
            error,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(RUN_FILE);
        fs::write(&path, serde_json::to_string_pretty(&record)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish<T>(self, result: Result<T>) -> Result<T> {
        match &result {
            Ok(_) => self.write("ok", None)?,
            Err(e) => self.write("error", Some(format!("{e:#}")))?,
        }
        result
    }
}
