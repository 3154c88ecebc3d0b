//! JSON-lines event log and the per-directory run manifest.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const LOG_FILE: &str = "log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLog {
    /// Appends to `dir/log.jsonl`, creating the directory if needed.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self { path, out: BufWriter::new(file) })
    }

    pub fn event(&mut self, event: &str, payload: Value) -> Result<()> {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut line = json!({ "ts": ts, "event": event });
        if let (Value::Object(dst), Value::Object(src)) = (&mut line, payload) {
            dst.extend(src);
        }
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n").map_err(|e| CliError::io(&self.path, e))?;
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// One executed subcommand: enough to re-run it identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub steps: Vec<Step>,
}

/// Adds `step` to `dir/manifest.json`.
pub fn record_step(dir: &Path, step: Step) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut manifest = match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(_) => Manifest { tool: "xmmp".into(), version: env!("CARGO_PKG_VERSION").into(), steps: Vec::new() },
    };
    manifest.steps.push(step);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| CliError::io(&path, e))
}
