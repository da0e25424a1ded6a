//! Run manifests: every command writes one next to its outputs, capturing
//! the resolved config, input digests, seeds, tool version and output paths.
//! Identity (everything except timestamps and thread count) determines the
//! outputs byte-for-byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Cfg;
use crate::error::CliError;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Resolved config snapshot (file plus --set overrides).
    pub config: serde_json::Value,
    pub seed_override: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Not part of the identity: outputs are thread-count invariant.
    pub threads: usize,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

fn toml_to_json(v: &toml::Value) -> serde_json::Value {
    match v {
        toml::Value::String(s) => serde_json::Value::String(s.clone()),
        toml::Value::Integer(i) => serde_json::Value::from(*i),
        toml::Value::Float(f) => {
            serde_json::Number::from_f64(*f).map(serde_json::Value::Number).unwrap_or_else(|| {
                serde_json::Value::String(f.to_string())
            })
        }
        toml::Value::Boolean(b) => serde_json::Value::Bool(*b),
        toml::Value::Datetime(d) => serde_json::Value::String(d.to_string()),
        toml::Value::Array(a) => serde_json::Value::Array(a.iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => serde_json::Value::Object(
            t.iter().map(|(k, v)| (k.clone(), toml_to_json(v))).collect(),
        ),
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::io(format!("cannot digest {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

impl Manifest {
    pub fn start(command: &str, cfg: &Cfg, seed_override: Option<u64>, threads: usize) -> Manifest {
        Manifest {
            tool: "hitmat".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: toml_to_json(&toml::Value::Table(cfg.as_table().clone())),
            seed_override,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            threads,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `<command>.manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.finished_unix_ms = now_ms();
        let path = dir.join(format!("{}.manifest.json", self.command));
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        crate::io::write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }

    /// The reproducibility identity: manifest minus timestamps and threads.
    pub fn identity_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        let obj = v.as_object_mut().expect("manifest is an object");
        obj.remove("started_unix_ms");
        obj.remove("finished_unix_ms");
        obj.remove("threads");
        v
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
