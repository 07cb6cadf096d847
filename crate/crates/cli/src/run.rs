//! Output directory handling: atomic writes, input digests and the run
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Config, Override};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("cannot rename into {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_file: Option<PathBuf>,
    pub config_file_sha256: Option<String>,
    /// Digest of the effective configuration after overrides.
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub overrides: Vec<Override>,
    pub seeds: BTreeMap<String, u64>,
    pub workers: usize,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
}

pub struct Run {
    pub out: PathBuf,
    pub dry_run: bool,
    started: Instant,
    manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, out: PathBuf, dry_run: bool) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("ngmm-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("ngmm-core".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Self {
            out,
            dry_run,
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                config_file: None,
                config_file_sha256: None,
                config_sha256: String::new(),
                config: serde_json::Value::Null,
                overrides: Vec::new(),
                seeds: BTreeMap::new(),
                workers: rayon::current_num_threads(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                versions,
                started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                wall_time_s: 0.0,
            },
        }
    }

    pub fn set_config(
        &mut self,
        config: &Config,
        file: Option<PathBuf>,
        file_digest: Option<String>,
        overrides: Vec<Override>,
    ) -> Result<()> {
        let value = serde_json::to_value(config)?;
        self.manifest.config_sha256 = sha256_hex(serde_json::to_string(&value)?.as_bytes());
        self.manifest.config = value;
        self.manifest.config_file = file;
        self.manifest.config_file_sha256 = file_digest;
        self.manifest.overrides = overrides;
        Ok(())
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.to_string(), seed);
    }

    /// Records the digest of an input file; fails naming the path when it
    /// cannot be read.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read input file {}", path.display()))?;
        self.manifest.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out.join(name), bytes)?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records files written by library routines into the output directory.
    pub fn record_output(&mut self, name: &str) -> Result<()> {
        let path = self.out.join(name);
        let bytes = std::fs::read(&path).with_context(|| format!("cannot read back {}", path.display()))?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.dry_run {
            println!("dry run: inputs valid, nothing written");
            return Ok(());
        }
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let body = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(&self.out.join("manifest.json"), &body)?;
        println!(
            "{}: wrote {} files to {}",
            self.manifest.command,
            self.manifest.outputs.len() + 1,
            self.out.display()
        );
        Ok(())
    }
}
