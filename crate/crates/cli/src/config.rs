//! Harness configuration: a TOML file, overridden by `EUEA_*` environment variables,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use euea_core::agent::AgentConfig;
use euea_core::dataset::GrpoFilterConfig;
use euea_core::eval::EvalConfig;
use euea_core::sim::SimConfig;
use serde::{Deserialize, Serialize};

/// Environment variable holding the remote backend's API key.
pub const API_KEY_ENV: &str = "EUEA_API_KEY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Oracle,
    Remote,
}

/// Fault presets for the scripted oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FaultPreset {
    None,
    /// Off-target box on the first attempt of every interaction.
    WrongBox,
    /// Absent object named on the first attempt of every interaction.
    WrongObject,
    /// Off-target box first, then the failed pair repeated on the second attempt.
    WrongBoxRepeat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of an OpenAI-compatible API, including the version segment.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key; the key itself is never stored.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub log_path: Option<PathBuf>,
    pub faults: FaultPreset,
    /// Log-probability noise for the oracle's sampled answers.
    pub noise: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Oracle,
            endpoint: None,
            model: None,
            api_key_env: API_KEY_ENV.to_string(),
            timeout_secs: 120,
            log_path: None,
            faults: FaultPreset::None,
            noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub out: PathBuf,
    /// Drives scenario generation and exploration; XORed into the agent and GRPO seeds.
    pub seed: u64,
    /// Worker threads; unset uses one per core.
    pub threads: Option<usize>,
    pub backend: BackendConfig,
    pub sim: SimConfig,
    pub agent: AgentConfig,
    pub grpo: GrpoFilterConfig,
    pub eval: EvalConfig,
    /// TOML or JSON table `{ scales = { OD = 1.0, ... } }`.
    pub reward_scales: Option<PathBuf>,
    pub embedder_url: Option<String>,
    /// Alternate instruction template file.
    pub templates: Option<PathBuf>,
    /// Frame store root for records read from disk; `<out>/datasets` when unset.
    pub frames: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("euea-out"),
            seed: 0,
            threads: None,
            backend: BackendConfig::default(),
            sim: SimConfig::default(),
            agent: AgentConfig::default(),
            grpo: GrpoFilterConfig::default(),
            eval: EvalConfig::default(),
            reward_scales: None,
            embedder_url: None,
            templates: None,
            frames: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl HarnessConfig {
    pub fn frames_root(&self) -> PathBuf {
        self.frames.clone().unwrap_or_else(|| self.out.join("datasets"))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string().replace('\n', " "),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !self.backend.noise.is_finite() || self.backend.noise < 0.0 {
            return bad(format!("backend.noise {} must be a finite non-negative number", self.backend.noise));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if let Err(e) = self.agent.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.grpo.validate() {
            return bad(e.to_string());
        }
        if !(0.0..=1.0).contains(&self.eval.ag_iou_threshold) {
            return bad(format!("eval.ag_iou_threshold {} outside [0, 1]", self.eval.ag_iou_threshold));
        }
        if !(self.sim.click_threshold > 0.0 && self.sim.click_threshold <= 1.0) {
            return bad(format!("sim.click_threshold {} outside (0, 1]", self.sim.click_threshold));
        }
        if self.backend.kind == BackendKind::Remote && (self.backend.endpoint.is_none() || self.backend.model.is_none()) {
            return bad("the remote backend needs backend.endpoint and backend.model".into());
        }
        for p in [&self.reward_scales, &self.templates, &self.frames].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

/// Settings that can come from a flag or, failing that, an `EUEA_*` variable.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Output directory (datasets/, transcripts/, reports/ live under it).
    #[arg(long, global = true, env = "EUEA_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "EUEA_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "EUEA_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, env = "EUEA_BACKEND", value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true, env = "EUEA_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, global = true, env = "EUEA_MODEL")]
    pub model: Option<String>,
    #[arg(long, global = true, env = "EUEA_EMBEDDER_URL")]
    pub embedder_url: Option<String>,
    #[arg(long, global = true, env = "EUEA_FAULT", value_enum)]
    pub fault: Option<FaultPreset>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut HarnessConfig) {
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
        if let Some(v) = self.backend {
            cfg.backend.kind = v;
        }
        if let Some(v) = &self.endpoint {
            cfg.backend.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.model {
            cfg.backend.model = Some(v.clone());
        }
        if let Some(v) = &self.embedder_url {
            cfg.embedder_url = Some(v.clone());
        }
        if let Some(v) = self.fault {
            cfg.backend.faults = v;
        }
    }
}
