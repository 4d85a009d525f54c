//! Reproducibility record written next to every output.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Versions {
    pub ssdm_cli: &'static str,
    pub ssdm_core: &'static str,
    pub rustc: &'static str,
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct ReproRecord {
    pub command: String,
    pub argv: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub versions: Versions,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    /// Values chosen at run time (selected cutoff, start step, ...).
    pub details: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl ReproRecord {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let mut hashed = config.clone();
        if let Some(map) = hashed.as_object_mut() {
            map.remove("out");
        }
        let config_hash = sha256_hex(&serde_json::to_vec(&hashed)?);
        Ok(Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            seeds: BTreeMap::new(),
            config,
            config_hash,
            versions: Versions {
                ssdm_cli: env!("CARGO_PKG_VERSION"),
                ssdm_core: ssdm_core::VERSION,
                rustc: env!("SSDM_RUSTC_VERSION"),
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_file() {
            self.inputs.push(InputFile {
                path: path.display().to_string(),
                sha256: hash_file(path)?,
            });
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write to `<dir>/repro.json` for directory outputs, else `<file>.repro.json`.
    pub fn write(&self, out: &Path) -> Result<()> {
        let path = if out.is_dir() {
            out.join("repro.json")
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".repro.json");
            out.with_file_name(name)
        };
        ssdm_core::appkit::io::write_json(&path, self)?;
        log::debug!("wrote {}", path.display());
        Ok(())
    }
}
