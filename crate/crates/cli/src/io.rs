use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use flexclear_core::model::{BidSet, Instance, Network, Setpoint};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A JSON document with its schema version next to the payload fields.
#[derive(Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a temporary file in the target directory, then renames it in place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<(), CliError> {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    };
    let mut text = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Other(e.to_string()))?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R], header: &[&str]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads a versioned JSON file and returns the payload with the file checksum.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(T, String), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let doc: Versioned<T> =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(CliError::Validation(format!(
            "{}: unsupported schema_version {}",
            path.display(),
            doc.schema_version
        )));
    }
    Ok((doc.body, sha256_hex(&bytes)))
}

pub const INSTANCE_FILES: [&str; 3] = ["network.json", "setpoint.json", "bids.json"];

/// Loads and validates an instance directory; also returns the file checksums.
pub fn load_instance(dir: &Path) -> Result<(Instance, BTreeMap<String, String>), CliError> {
    let (network, a): (Network, _) = read_json(&dir.join(INSTANCE_FILES[0]))?;
    let (setpoint, b): (Setpoint, _) = read_json(&dir.join(INSTANCE_FILES[1]))?;
    let (bids, c): (BidSet, _) = read_json(&dir.join(INSTANCE_FILES[2]))?;
    let instance = Instance {
        network,
        setpoint,
        bids,
    };
    let report = instance.validate();
    if !report.is_ok() {
        return Err(CliError::Validation(report.to_string()));
    }
    let sums = INSTANCE_FILES.iter().map(|f| f.to_string()).zip([a, b, c]).collect();
    Ok((instance, sums))
}

pub fn write_instance(dir: &Path, instance: &Instance) -> Result<(), CliError> {
    write_json(&dir.join(INSTANCE_FILES[0]), &instance.network)?;
    write_json(&dir.join(INSTANCE_FILES[1]), &instance.setpoint)?;
    write_json(&dir.join(INSTANCE_FILES[2]), &instance.bids)
}

/// Provenance written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub artifact_version: String,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_hash: None,
            seed: None,
            inputs: BTreeMap::new(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn time(&mut self, step: &str, d: Duration) {
        self.timings_ms.insert(step.to_string(), d.as_secs_f64() * 1e3);
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("manifest.json"), self)
    }
}
