//! Result files and the run manifest.
//!
//! Floats are written with Rust's shortest round-trip formatting, which does
//! not depend on the locale. Missing values are empty cells.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Command, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const SNAPSHOT: &str = "config.resolved.toml";

/// Round-trip decimal text for `x`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:?}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmittedFile {
    /// Path relative to the output directory.
    pub path: String,
    /// Data rows for CSV files, excluding the header.
    pub rows: Option<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub timestamp: String,
    pub status: String,
    pub error: Option<String>,
    pub files: Vec<EmittedFile>,
}

/// Output directory of one run; every file written through it is listed in the manifest.
pub struct RunContext {
    pub dir: PathBuf,
    command: Command,
    config_hash: String,
    files: Vec<EmittedFile>,
}

impl RunContext {
    /// Creates the directory and writes the resolved-config snapshot.
    pub fn create(cfg: &ExperimentConfig, command: Command) -> CliResult<Self> {
        fs::create_dir_all(&cfg.output_dir)?;
        let mut ctx = Self {
            dir: cfg.output_dir.clone(),
            command,
            config_hash: cfg.hash()?,
            files: Vec::new(),
        };
        ctx.write_bytes(SNAPSHOT, cfg.to_toml()?.as_bytes(), None)?;
        Ok(ctx)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write_bytes(&mut self, rel: &str, bytes: &[u8], rows: Option<usize>) -> CliResult<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.record(rel, bytes, rows);
        Ok(path)
    }

    fn record(&mut self, rel: &str, bytes: &[u8], rows: Option<usize>) {
        self.files.retain(|f| f.path != rel);
        self.files.push(EmittedFile {
            path: rel.to_string(),
            rows,
            sha256: format!("{:x}", Sha256::digest(bytes)),
        });
    }

    /// Writes a CSV with a header row.
    pub fn write_csv(
        &mut self,
        rel: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            if r.len() != header.len() {
                return Err(CliError::Runtime(format!(
                    "{rel}: row has {} cells, header has {}",
                    r.len(),
                    header.len()
                )));
            }
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Runtime(format!("{rel}: {e}")))?;
        self.write_bytes(rel, &bytes, Some(rows.len()))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Runtime(format!("{rel}: {e}")))?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes(), None)
    }

    /// Lists a file written by other code (checkpoints).
    pub fn register(&mut self, rel: &str) -> CliResult<()> {
        let bytes = fs::read(self.path(rel))?;
        self.record(rel, &bytes, None);
        Ok(())
    }

    /// Writes `manifest.json` with the outcome of the run.
    pub fn finish(&self, outcome: &CliResult<()>) -> CliResult<RunManifest> {
        let (status, error) = match outcome {
            Ok(()) => ("ok", None),
            Err(CliError::Verification(m)) => ("verification_failed", Some(m.clone())),
            Err(e) => ("failed", Some(e.to_string())),
        };
        let manifest = RunManifest {
            command: self.command.name().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config_hash.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            status: status.to_string(),
            error,
            files: self.files.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
        fs::write(self.path(MANIFEST), text + "\n")?;
        Ok(manifest)
    }
}

/// Path of `p` relative to `base` when it lies inside it.
pub fn relative(p: &Path, base: &Path) -> String {
    p.strip_prefix(base)
        .unwrap_or(p)
        .to_string_lossy()
        .replace('\\', "/")
}
