use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Stage};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::open(path).map_err(io)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash over the config hash and every input hash.
    pub fingerprint: String,
    /// Input name (artifact path relative to the run, or `input:<name>` for
    /// external files) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path relative to the run directory to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
    /// True when the previous outputs were reused.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl RunManifest {
    pub fn new(run_id: &str, config_hash: &str, seed: u64) -> Self {
        RunManifest {
            run_id: run_id.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Option<Self>, PipelineError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(PipelineError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        serde_json::from_str(&text).map(Some).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Output hashes of every stage, without timestamps.
    pub fn output_hashes(&self) -> BTreeMap<Stage, BTreeMap<String, String>> {
        self.stages
            .iter()
            .map(|(s, r)| (*s, r.outputs.clone()))
            .collect()
    }
}

pub(crate) fn fingerprint(stage: Stage, config_hash: &str, inputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(stage.name().as_bytes());
    h.update([0]);
    h.update(config_hash.as_bytes());
    for (k, v) in inputs {
        h.update([0]);
        h.update(k.as_bytes());
        h.update([1]);
        h.update(v.as_bytes());
    }
    hex::encode(h.finalize())
}
