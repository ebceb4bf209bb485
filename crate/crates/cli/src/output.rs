//! File writers. Every data file gets a `<name>.meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    /// Hash of the effective run config (after flag overrides).
    pub config_hash: Option<String>,
    pub master_seed: Option<u64>,
    /// Hash of the input file for commands that read one.
    pub input_hash: Option<String>,
}

impl Meta {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "rampflow",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: None,
            master_seed: None,
            input_hash: None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_meta(path: &Path, meta: &Meta) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta)? + "\n";
    fs::write(&side, text).with_context(|| format!("writing {}", side.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, meta: &Meta) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    write_meta(path, meta)
}

/// Rows as CSV with a header, even when there are no rows.
pub fn csv_string<T: Serialize>(header: &[&str], rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn write_csv<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: &[T],
    meta: &Meta,
) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, csv_string(header, rows)?)
        .with_context(|| format!("writing {}", path.display()))?;
    write_meta(path, meta)
}
