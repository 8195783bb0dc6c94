//! On-disk configuration for the command-line tool.
//!
//! Relative paths are resolved against the directory holding the config
//! file, or the working directory when no file is used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::SandboxConfig;
use crate::llm::LlmConfig;
use crate::orchestrator::AgentConfig;

pub const DEFAULT_CONFIG: &str = "ehragent.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "d_tables")]
    pub tables: PathBuf,
    #[serde(default = "d_metadata")]
    pub metadata: PathBuf,
    #[serde(default = "d_memory")]
    pub memory: PathBuf,
    #[serde(default = "d_demos")]
    pub demos: PathBuf,
    #[serde(default = "d_knowledge_demos")]
    pub knowledge_demos: PathBuf,
    #[serde(default)]
    pub replay: Option<PathBuf>,
}

fn d_tables() -> PathBuf {
    "tables".into()
}
fn d_metadata() -> PathBuf {
    "metadata.json".into()
}
fn d_memory() -> PathBuf {
    "memory.jsonl".into()
}
fn d_demos() -> PathBuf {
    "demos.json".into()
}
fn d_knowledge_demos() -> PathBuf {
    "knowledge_demos.json".into()
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            tables: d_tables(),
            metadata: d_metadata(),
            memory: d_memory(),
            demos: d_demos(),
            knowledge_demos: d_knowledge_demos(),
            replay: None,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.tables,
            &mut self.metadata,
            &mut self.memory,
            &mut self.demos,
            &mut self.knowledge_demos,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = self.replay.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub sandbox: SandboxConfig,
    /// Compare questions case-insensitively during memory retrieval.
    #[serde(default)]
    pub memory_lowercase: bool,
}

impl CliConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<CliConfig, ConfigError> {
        let cfg: CliConfig = serde_json::from_str(text).map_err(|e| ConfigError::Invalid {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<CliConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = CliConfig::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    /// `path` if given, else `ehragent.json` in the working directory when
    /// present, else the defaults.
    pub fn discover(path: Option<&Path>) -> Result<CliConfig, ConfigError> {
        match path {
            Some(p) => CliConfig::load(p),
            None if Path::new(DEFAULT_CONFIG).is_file() => CliConfig::load(Path::new(DEFAULT_CONFIG)),
            None => Ok(CliConfig::default()),
        }
    }

    fn validate(&self, origin: &Path) -> Result<(), ConfigError> {
        let bad = |detail: &str| {
            Err(ConfigError::Invalid {
                path: origin.to_path_buf(),
                detail: detail.to_string(),
            })
        };
        if self.agent.max_steps < 1 {
            return bad("agent.max_steps must be at least 1");
        }
        if !(self.sandbox.timeout_s > 0.0) {
            return bad("sandbox.timeout_s must be positive");
        }
        if !(self.llm.timeout_s > 0.0) {
            return bad("llm.timeout_s must be positive");
        }
        Ok(())
    }
}
