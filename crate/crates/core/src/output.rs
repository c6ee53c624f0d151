//! Run artifacts: `<command>-<timestamp>.<ext>` payload files plus a
//! `<command>-<timestamp>.meta.json` sidecar.
//!
//! Payload rows are a pure function of the configuration; only the file names
//! and the sidecar's `timestamp` vary between identical runs. Each CSV starts
//! with a `# config_hash: <hex>` comment line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON form (object keys sorted).
pub fn config_hash(config: &Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

/// Where an input dataset came from and what it contained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub name: String,
    /// File path, or `bundled:<name>` for compiled-in data.
    pub source: String,
    pub sha256: String,
}

impl Provenance {
    pub fn new(name: &str, source: &str, content: &str) -> Self {
        Self { name: name.into(), source: source.into(), sha256: sha256_hex(content.as_bytes()) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub timestamp: String,
    pub tool_version: &'static str,
    pub config_hash: String,
    /// Resolved configuration the hash was computed from.
    pub config: Value,
    pub datasets: Vec<Provenance>,
    /// Grid, search and processing parameters.
    pub parameters: Value,
    pub artifacts: Vec<String>,
    pub notes: Vec<String>,
}

/// Plain numeric/text table; cells are formatted once, deterministically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(f64::to_string).collect());
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }
}

pub struct ArtifactWriter {
    dir: PathBuf,
    stem: String,
    command: String,
    timestamp: String,
    hash: String,
    written: Vec<String>,
}

impl ArtifactWriter {
    /// Picks a stem that is not yet taken in `dir` by stepping the millisecond field.
    pub fn new(dir: impl AsRef<Path>, command: &str, now: DateTime<Utc>, config: &Value) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut t = now;
        let stem = loop {
            let stem = format!("{command}-{}", t.format("%Y%m%dT%H%M%S%3fZ"));
            if !dir.join(format!("{stem}.meta.json")).exists() {
                break stem;
            }
            t += chrono::Duration::milliseconds(1);
        };
        Ok(Self { dir, stem, command: command.into(), timestamp: t.to_rfc3339(), hash: config_hash(config), written: Vec::new() })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    fn path(&mut self, suffix: &str) -> PathBuf {
        let name = format!("{}{suffix}", self.stem);
        self.written.push(name.clone());
        self.dir.join(name)
    }

    /// `suffix` distinguishes several tables from one run, e.g. `"-spectrum"`.
    pub fn csv(&mut self, suffix: &str, table: &Table) -> Result<PathBuf> {
        let path = self.path(&format!("{suffix}.csv"));
        let mut file = fs::File::create(&path)?;
        writeln!(file, "# config_hash: {}", self.hash)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&table.headers)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }

    /// JSON payload wrapped with the config hash.
    pub fn json<T: Serialize>(&mut self, suffix: &str, payload: &T) -> Result<PathBuf> {
        let path = self.path(&format!("{suffix}.json"));
        let doc = serde_json::json!({ "config_hash": self.hash, "result": payload });
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(path)
    }

    /// Writes the sidecar last so it lists every payload file.
    pub fn finish(self, config: Value, datasets: Vec<Provenance>, parameters: Value, notes: Vec<String>) -> Result<Vec<PathBuf>> {
        let meta_path = self.dir.join(format!("{}.meta.json", self.stem));
        let meta = RunMetadata {
            command: self.command,
            timestamp: self.timestamp,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: self.hash,
            config,
            datasets,
            parameters,
            artifacts: self.written.clone(),
            notes,
        };
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
        let mut out: Vec<PathBuf> = self.written.iter().map(|n| self.dir.join(n)).collect();
        out.push(meta_path);
        Ok(out)
    }
}
