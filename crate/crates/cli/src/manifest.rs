use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CmdResult, Failure};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Record of one command invocation: what ran, with which settings, and
/// what it read and wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Fully resolved settings, enough to rerun the command.
    pub config: serde_json::Value,
    pub seed: u64,
    /// Input path → sha256 (directories hash their sorted contents).
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory → sha256.
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn begin(command: &str, config: &impl Serialize, seed: u64) -> CmdResult<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).map_err(|e| Failure::usage(e.to_string()))?,
            seed,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            started_unix: now_unix(),
            finished_unix: 0.0,
        })
    }

    pub fn add_input(&mut self, path: &Path) -> CmdResult {
        let digest = digest_path(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Hashes every file under `out` and writes the manifest there.
    pub fn finish(mut self, out: &Path) -> CmdResult<PathBuf> {
        for file in files_under(out)? {
            let rel = file.strip_prefix(out).unwrap_or(&file).to_string_lossy().replace('\\', "/");
            if rel != RUN_MANIFEST {
                self.artifacts.insert(rel, hash_file(&file)?);
            }
        }
        self.finished_unix = now_unix();
        let path = out.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&self).map_err(|e| Failure::io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
    }
}

fn files_under(dir: &Path) -> CmdResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Failure::io(format!("{}: {e}", d.display())))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn hash_file(path: &Path) -> CmdResult<String> {
    let bytes = fs::read(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// File hash, or for a directory the hash of its `name\thash` listing.
pub fn digest_path(path: &Path) -> CmdResult<String> {
    if !path.is_dir() {
        return hash_file(path);
    }
    let mut h = Sha256::new();
    for file in files_under(path)? {
        let rel = file.strip_prefix(path).unwrap_or(&file).to_string_lossy().into_owned();
        h.update(format!("{rel}\t{}\n", hash_file(&file)?));
    }
    Ok(hex::encode(h.finalize()))
}
