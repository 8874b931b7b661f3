//! Run manifests: what was run, on which bytes, producing which bytes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, ResultExt};
use crate::runs::{Outputs, RunConfig};

pub const MANIFEST_SCHEMA: &str = "hcd-manifest/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    /// `None` when the file could not be read (e.g. a missing eval input).
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: String,
    pub version: String,
    /// Fully resolved configuration, every default spelled out.
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    /// Deterministic outputs, relative to the manifest's directory.
    pub outputs: Vec<FileHash>,
    /// Wall-clock measurements; these legitimately differ between runs.
    pub timing_outputs: Vec<PathBuf>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> FileHash {
    FileHash { path: path.to_path_buf(), sha256: std::fs::read(path).ok().map(|b| sha256_hex(&b)) }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Executes `config` with outputs under `dir` and writes its manifest there.
pub fn execute(config: &RunConfig, dir: &Path) -> CliResult<(RunManifest, Outputs)> {
    std::fs::create_dir_all(dir).ctx(format!("creating {}", dir.display()))?;
    let inputs = config.inputs().iter().map(|p| hash_file(p)).collect();
    let started = now_ms();
    let outputs = config.execute(dir)?;
    let finished = now_ms();
    let hashed = outputs
        .files
        .iter()
        .map(|rel| FileHash { path: rel.clone(), ..hash_file(&dir.join(rel)) })
        .collect();
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seed: config.seed(),
        inputs,
        outputs: hashed,
        timing_outputs: outputs.timing.clone(),
        started_unix_ms: started,
        finished_unix_ms: finished,
    };
    let path = dir.join(config.manifest_name());
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").ctx(path.display())?;
    Ok((manifest, outputs))
}

pub fn load_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).ctx(path.display())?;
    let m: RunManifest = serde_json::from_str(&text).ctx(path.display())?;
    if m.schema != MANIFEST_SCHEMA {
        return Err(CliError::data(format!("unsupported manifest schema {:?}", m.schema)));
    }
    Ok(m)
}

/// Re-runs a manifest into `dir` and checks every deterministic output
/// against the recorded hash. Changed inputs are a data error; differing
/// outputs a numeric (reproducibility) failure.
pub fn replay(manifest: &RunManifest, dir: &Path) -> CliResult<RunManifest> {
    for recorded in &manifest.inputs {
        let now = hash_file(&recorded.path);
        if now.sha256 != recorded.sha256 {
            return Err(CliError::data(format!("input {} changed since the recorded run", recorded.path.display())));
        }
    }
    let (fresh, _) = execute(&manifest.config, dir)?;
    let mismatched: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|o| fresh.outputs.iter().find(|f| f.path == o.path).map(|f| &f.sha256) != Some(&o.sha256))
        .map(|o| o.path.display().to_string())
        .collect();
    if !mismatched.is_empty() {
        return Err(CliError::numeric(format!("replay differs in {}", mismatched.join(", "))));
    }
    Ok(fresh)
}
