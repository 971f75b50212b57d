//! Run configuration: a TOML file, then `RECENGINE_SECTION__KEY` environment
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use recengine_core::batcher::BatchConfig;
use recengine_core::evaluation::SplitSpec;
use recengine_core::event_log::{SyntheticConfig, DAY_MS};
use recengine_core::features::{EmbedderSpec, FeatureConfig};
use recengine_core::models::{MfConfig, MlpConfig, ModelKind};

pub const ENV_PREFIX: &str = "RECENGINE_";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub log: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

/// Split lengths in days from the first logged event. Unset lengths default
/// to 60/20/20% of the log span.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_days: Option<f64>,
    pub validation_days: Option<f64>,
    pub test_days: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub mlp: MlpConfig,
    pub mf: MfConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Mlp,
            mlp: MlpConfig::study(),
            mf: MfConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Test initiations to rank; 0 ranks all of them.
    pub test_sample: usize,
    /// Models evaluated next to the trained one.
    pub baselines: Vec<ModelKind>,
    pub coverage_authors: usize,
    pub k: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            test_sample: 1000,
            baselines: vec![ModelKind::PeopleYouKnow, ModelKind::MostInits, ModelKind::Random],
            coverage_authors: 1000,
            k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendConfig {
    /// Eligible, active authors drawn as participants.
    pub participants: usize,
    /// Scoring instant in ms; defaults to just after the last logged event.
    pub at: Option<i64>,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        RecommendConfig {
            participants: 50,
            at: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub pre_weeks: u32,
    pub post_weeks: u32,
    pub n_bootstrap: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            pre_weeks: 5,
            post_weeks: 13,
            n_bootstrap: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub paths: PathsConfig,
    pub synthetic: SyntheticConfig,
    pub split: SplitConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub evaluation: EvaluationConfig,
    pub recommend: RecommendConfig,
    pub batch: BatchConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            paths: PathsConfig::default(),
            synthetic: SyntheticConfig::default(),
            split: SplitConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            evaluation: EvaluationConfig::default(),
            recommend: RecommendConfig::default(),
            batch: BatchConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

/// Parses an override value as a TOML scalar or array, falling back to a bare string.
fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> anyhow::Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| anyhow!("empty override key"))?;
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| anyhow!("`{p}` is not a section"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Reads `path` (or defaults), applies `vars` overrides and resolves the
/// `paths` section against the config file's directory.
pub fn load_config(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("--config: cannot read {}", p.display()))?;
            toml::from_str::<toml::Table>(&text)
                .with_context(|| format!("--config: {} is not valid TOML", p.display()))?
        }
        None => toml::Table::new(),
    };
    let mut overrides: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    overrides.sort();
    for (key, raw) in overrides {
        let segments: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
        apply_override(&mut table, &segments, env_value(&raw))
            .with_context(|| format!("environment override {key}"))?;
    }
    let mut cfg: RunConfig = table.try_into().context("invalid configuration")?;
    if let Some(dir) = path.and_then(Path::parent) {
        for p in [&mut cfg.paths.log, &mut cfg.paths.embeddings, &mut cfg.paths.model]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
    Ok(cfg)
}

impl RunConfig {
    /// Copies the global seed into every seeded subsystem.
    pub fn propagate_seed(&mut self) {
        let seed = self.seed;
        self.synthetic.seed = seed;
        self.model.mlp.seed = seed;
        self.model.mf.seed = seed;
        self.batch.seed = seed;
        if let EmbedderSpec::Hashing { seed: s, .. } = &mut self.features.embedder {
            *s = seed;
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.mlp.validate()?;
        self.model.mf.validate()?;
        self.batch.validate()?;
        self.synthetic.validate()?;
        if self.evaluation.k == 0 || self.evaluation.coverage_authors == 0 {
            bail!("evaluation.k and evaluation.coverage_authors must be >= 1");
        }
        if self.analysis.pre_weeks == 0 || self.analysis.post_weeks == 0 || self.analysis.n_bootstrap < 2 {
            bail!("analysis windows must be positive and n_bootstrap >= 2");
        }
        for (name, p) in [
            ("paths.log", &self.paths.log),
            ("paths.embeddings", &self.paths.embeddings),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    bail!("{name}: no such file {}", p.display());
                }
            }
        }
        Ok(())
    }

    /// Split boundaries for a log spanning `[first_ts, last_ts]`.
    pub fn split_spec(&self, first_ts: i64, last_ts: i64) -> SplitSpec {
        let span_days = (last_ts - first_ts) as f64 / DAY_MS as f64;
        let s = &self.split;
        SplitSpec::from_days(
            first_ts,
            s.train_days.unwrap_or(0.6 * span_days),
            s.validation_days.unwrap_or(0.2 * span_days),
            // one extra day keeps the final events inside the test window
            s.test_days.unwrap_or(0.2 * span_days + 1.0),
        )
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
