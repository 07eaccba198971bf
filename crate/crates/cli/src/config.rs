//! Run configuration: JSON on disk, `${VAR}` interpolation inside the
//! `gateway` section only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use iotguard_core::advisor::AdvisorThresholds;
use iotguard_core::autoencoder::TrainConfig;
use iotguard_core::detection::ThresholdMethod;
use iotguard_core::llm::{Backoff, GatewayConfig};
use iotguard_core::pipeline::{AdvisorMode, PcaSettings, PipelineSpec, Settings};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    Path(PathBuf),
    Synthetic { synthetic: SyntheticSource },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub rows: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train: 0.7, val: 0.15, test: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineChoice {
    Pca,
    #[default]
    Advisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorConfig {
    pub mode: AdvisorMode,
    pub thresholds: AdvisorThresholds,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySection {
    /// Replay recorded responses from this directory instead of calling out.
    pub fixture_dir: Option<PathBuf>,
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff: Option<Backoff>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainMode {
    #[default]
    Offline,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub mode: ExplainMode,
    pub max_cases: usize,
    pub top_k: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { mode: ExplainMode::Offline, max_cases: 10, top_k: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Schema JSON; the KDD schema when absent.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Stratified subsample size taken before splitting.
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub pipeline: PipelineChoice,
    #[serde(default)]
    pub pca: PcaSettings,
    #[serde(default)]
    pub advisor: AdvisorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub threshold: ThresholdMethod,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_bins() -> usize {
    50
}

/// A parsed config plus the hash of the file it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
    pub path: PathBuf,
}

/// Replaces `${NAME}` with the environment value (empty when unset).
fn interpolate(s: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, CliError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| CliError::config(format!("unterminated ${{ in gateway value `{s}`")))?;
        out.push_str(&lookup(&after[..end]).unwrap_or_default());
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(v: &mut Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), CliError> {
    match v {
        Value::String(s) => *s = interpolate(s, lookup)?,
        Value::Array(items) => {
            for item in items {
                interpolate_value(item, lookup)?;
            }
        }
        Value::Object(map) => {
            for item in map.values_mut() {
                interpolate_value(item, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn env_lookup(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

/// Parses config text. Relative paths are resolved against `base_dir`.
pub fn parse_config(
    text: &str,
    base_dir: &Path,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<RunConfig, CliError> {
    let mut raw: Value =
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config is not valid JSON: {e}")))?;
    if let Some(g) = raw.get_mut("gateway") {
        interpolate_value(g, lookup)?;
    }
    let mut cfg: RunConfig =
        serde_json::from_value(raw).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base_dir.join(&*p);
        }
    };
    if let DatasetSource::Path(p) = &mut cfg.dataset {
        resolve(p);
    }
    if let Some(p) = &mut cfg.schema {
        resolve(p);
    }
    if let Some(p) = &mut cfg.gateway.fixture_dir {
        resolve(p);
    }
    if let Some(p) = &mut cfg.output_dir {
        resolve(p);
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::config(format!("config {} is not UTF-8", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let config = parse_config(&text, base, &env_lookup)?;
    Ok(LoadedConfig { config, sha256: crate::artifacts::sha256_hex(&bytes), path: path.to_path_buf() })
}

impl RunConfig {
    /// Checks that referenced paths exist and values are in range.
    pub fn check(&self) -> Result<(), CliError> {
        if let DatasetSource::Path(p) = &self.dataset {
            if !p.is_file() {
                return Err(CliError::config(format!("dataset {} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.schema {
            if !p.is_file() {
                return Err(CliError::config(format!("schema {} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.gateway.fixture_dir {
            if !p.is_dir() {
                return Err(CliError::config(format!("fixture_dir {} does not exist", p.display())));
            }
        }
        if self.histogram_bins == 0 {
            return Err(CliError::config("histogram_bins must be at least 1"));
        }
        if self.explain.top_k == 0 {
            return Err(CliError::config("explain.top_k must be at least 1"));
        }
        if let PcaSettings::Components(0) = self.pca {
            return Err(CliError::config("pca.components must be at least 1"));
        }
        self.advisor.thresholds.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn spec(&self) -> PipelineSpec {
        match self.pipeline {
            PipelineChoice::Pca => self.pca_spec(),
            PipelineChoice::Advisor => self.advisor_spec(),
        }
    }

    pub fn pca_spec(&self) -> PipelineSpec {
        PipelineSpec::Pca { pca: self.pca }
    }

    pub fn advisor_spec(&self) -> PipelineSpec {
        PipelineSpec::Advisor { mode: self.advisor.mode, thresholds: self.advisor.thresholds }
    }

    /// Pipeline settings; the run seed also seeds training.
    pub fn settings(&self) -> Settings {
        let mut train = self.train.clone();
        train.seed = self.seed;
        Settings { train, threshold: self.threshold, histogram_bins: self.histogram_bins }
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.split.train, self.split.val, self.split.test)
    }

    /// Endpoint settings: config values, overridden by `LLM_API_URL`,
    /// `LLM_API_KEY` and `LLM_MODEL`. Fixture replay needs no URL or key.
    pub fn gateway_config(&self) -> GatewayConfig {
        let g = &self.gateway;
        let mut cfg = if g.fixture_dir.is_some() {
            GatewayConfig::for_fixtures()
        } else {
            let mut c = GatewayConfig::default();
            if let Some(u) = &g.base_url {
                c.base_url = u.clone();
            }
            c.api_key = g.api_key.clone().filter(|k| !k.is_empty());
            c.with_env()
        };
        if let Some(m) = &g.model {
            if g.fixture_dir.is_some() || std::env::var(iotguard_core::llm::ENV_MODEL).is_err() {
                cfg.model = m.clone();
            }
        }
        if let Some(t) = g.timeout_ms {
            cfg.timeout_ms = t;
        }
        if let Some(r) = g.max_retries {
            cfg.max_retries = r;
        }
        if let Some(b) = g.backoff {
            cfg.backoff = b;
        }
        cfg
    }
}
