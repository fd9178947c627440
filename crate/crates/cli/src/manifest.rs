//! Per-stage manifests: the config hash a stage ran under and content hashes
//! of what it read and wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_bytes(&serde_json::to_vec(value).expect("serializable"))
}

/// A run directory and whether stale upstream artifacts are accepted.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub dir: PathBuf,
    pub force: bool,
}

impl RunDir {
    pub fn new(dir: impl Into<PathBuf>, force: bool) -> CliResult<RunDir> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join("manifests"))?;
        Ok(RunDir { dir, force })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.dir.join("manifests").join(format!("{stage}.json"))
    }

    fn label(&self, p: &Path) -> String {
        p.strip_prefix(&self.dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    }

    /// Loads the manifest `stage` left behind and checks it was produced
    /// under `config_hash` and that its outputs are unchanged.
    pub fn require(&self, stage: &'static str, config_hash: &str) -> CliResult<Manifest> {
        let path = self.manifest_path(stage);
        let text = std::fs::read_to_string(&path).map_err(|_| CliError::Missing {
            artifact: path.display().to_string(),
            command: stage,
        })?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Stale(format!("unreadable manifest {}: {e}", path.display())))?;
        if m.schema != MANIFEST_VERSION && !self.force {
            return Err(CliError::Stale(format!(
                "manifest {} has schema {} (expected {MANIFEST_VERSION})",
                path.display(),
                m.schema
            )));
        }
        if m.config_hash != config_hash && !self.force {
            return Err(CliError::Stale(format!(
                "`{stage}` artifacts were produced under a different configuration"
            )));
        }
        for (name, hash) in &m.outputs {
            let p = self.dir.join(name);
            if !p.exists() {
                return Err(CliError::Missing {
                    artifact: p.display().to_string(),
                    command: stage,
                });
            }
            if &sha256_file(&p)? != hash && !self.force {
                return Err(CliError::Stale(format!(
                    "{name} changed since `{stage}` wrote it"
                )));
            }
        }
        Ok(m)
    }

    pub fn record(
        &self,
        stage: &str,
        config_hash: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> CliResult<Manifest> {
        let digest = |ps: &[PathBuf]| -> CliResult<BTreeMap<String, String>> {
            ps.iter()
                .map(|p| Ok((self.label(p), sha256_file(p)?)))
                .collect()
        };
        let m = Manifest {
            schema: MANIFEST_VERSION,
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            inputs: digest(inputs)?,
            outputs: digest(outputs)?,
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(self.manifest_path(stage), text + "\n")?;
        Ok(m)
    }
}
