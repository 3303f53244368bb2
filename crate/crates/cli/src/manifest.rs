//! Run manifests: everything needed to repeat a run, plus digests of its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use sieve_bvm::io::Table;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the outputs of one subcommand and the facts recorded about it.
#[derive(Debug)]
pub struct Run {
    subcommand: &'static str,
    config: ExperimentConfig,
    outputs: BTreeMap<String, String>,
    facts: BTreeMap<String, Value>,
    started: std::time::Instant,
}

impl Run {
    pub fn new(subcommand: &'static str, config: &ExperimentConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&config.out).map_err(|e| CliError::Io(format!("{}: {e}", config.out.display())))?;
        Ok(Self {
            subcommand,
            config: config.clone(),
            outputs: BTreeMap::new(),
            facts: BTreeMap::new(),
            started: std::time::Instant::now(),
        })
    }

    pub fn record(&mut self, key: &str, value: Value) {
        self.facts.insert(key.to_string(), value);
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.config.out.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.outputs.insert(name.to_string(), sha256_hex(text.as_bytes()));
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write_text(name, &table.to_csv())
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out
    }

    /// Write `manifest.json` with keys in sorted order.
    pub fn finish(self, status: &str) -> Result<(), CliError> {
        let config = serde_json::to_value(&self.config).map_err(|e| CliError::Config(e.to_string()))?;
        let manifest = json!({
            "manifest_version": 1,
            "tool": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
            "subcommand": self.subcommand,
            "status": status,
            "config": config,
            "config_hash": sha256_hex(config.to_string().as_bytes()),
            "master_seed": self.config.seed,
            "outputs": self.outputs,
            "details": self.facts,
            "timing_seconds": self.started.elapsed().as_secs_f64(),
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        let path = self.config.out.join(MANIFEST_FILE);
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
