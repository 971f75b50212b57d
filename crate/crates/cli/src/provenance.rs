use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use recengine_core::feedback::SAMPLE_FILE_FORMAT;
use recengine_core::models::MODEL_FORMAT_VERSION;

use crate::config::RunConfig;

/// What produced a set of outputs. Carries no clock readings so that
/// identical runs write identical records.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub versions: BTreeMap<&'static str, String>,
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Hashes every regular file under `path` (recursively for directories).
fn hash_tree(path: &Path, out: &mut BTreeMap<String, String>) -> anyhow::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            hash_tree(&e.path(), out)?;
        }
    } else if path.is_file() {
        out.insert(path.display().to_string(), file_sha256(path)?);
    }
    Ok(())
}

impl Provenance {
    pub fn new(command: &str, args: &[String], cfg: &RunConfig) -> Self {
        let versions = BTreeMap::from([
            ("recengine", env!("CARGO_PKG_VERSION").to_string()),
            ("model_format", MODEL_FORMAT_VERSION.to_string()),
            ("sample_format", format!("{SAMPLE_FILE_FORMAT}/1")),
        ]);
        Provenance {
            command: command.to_string(),
            args: args.to_vec(),
            seed: cfg.seed,
            config_sha256: cfg.sha256(),
            config: cfg.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            versions,
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        hash_tree(path, &mut self.inputs)
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        hash_tree(path, &mut self.outputs)
    }

    /// Writes `<output_dir>/provenance/<command>.json`.
    pub fn write(&self, output_dir: &Path) -> anyhow::Result<()> {
        let dir = output_dir.join("provenance");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.json", self.command.replace(' ', "-")));
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }
}
