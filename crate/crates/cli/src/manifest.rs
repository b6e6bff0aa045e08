//! Run manifests: the resolved config plus content hashes of every input
//! and output, so reruns can be compared by checksum.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

/// Git-style blob hash: SHA-256 over `"blob <len>\0"` followed by the content.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(blob_hash(&bytes))
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config: &'a PipelineConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Writes `run_manifest_<command>.json` under `out`. Outputs are keyed by
/// their path relative to `out`.
pub fn write_run_manifest(
    out: &Path,
    command: &str,
    cfg: &PipelineConfig,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let mut m = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
    };
    for p in inputs {
        m.inputs.insert(p.display().to_string(), hash_file(p)?);
    }
    for p in outputs {
        let key = p.strip_prefix(out).unwrap_or(p).display().to_string();
        m.outputs.insert(key, hash_file(p)?);
    }
    let path = out.join(format!("run_manifest_{}.json", command.replace('-', "_")));
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}
