//! Service configuration.
//!
//! Values are layered: built-in defaults, then a TOML file, then
//! `LOOPSMITH_*` environment variables. Every layer is optional.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use loopsmith_core::audio::{AssetStore, IdMode};
use loopsmith_core::backends::{BackendConfig, BackendKind, Backends, BackendsConfig};
use loopsmith_core::handler::{Engine, EngineConfig};
use loopsmith_core::llm::{ChatClientConfig, ChatCompletionClient, LanguageModel, ScriptedPlanner};
use loopsmith_core::tools::ToolRegistry;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config file {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("environment variable {var}={value:?}: {reason}")]
    Env { var: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot build engine: {0}")]
    Engine(String),
}

/// Which language model drives the dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    /// Rule-based offline planner.
    #[default]
    Scripted,
    /// An OpenAI-compatible chat-completion endpoint.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LlmSection {
    pub kind: LlmKind,
    pub remote: ChatClientConfig,
}

/// Session table limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionLimits {
    pub capacity: usize,
    /// Sessions untouched for this long may be evicted.
    pub idle_timeout_seconds: u64,
}

impl Default for SessionLimits {
    fn default() -> Self {
        Self {
            capacity: 256,
            idle_timeout_seconds: 3600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Directory holding `music/`.
    pub asset_root: PathBuf,
    pub bind: String,
    /// Seeds asset ids and mock backends; `None` draws ids from the OS.
    pub seed: Option<u64>,
    /// Largest accepted request body, in bytes (uploads included).
    pub max_upload_bytes: usize,
    pub engine: EngineConfig,
    pub backends: BackendsConfig,
    pub llm: LlmSection,
    pub sessions: SessionLimits,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            asset_root: PathBuf::from("assets"),
            bind: "127.0.0.1:8080".into(),
            seed: None,
            max_upload_bytes: 64 * 1024 * 1024,
            engine: EngineConfig::default(),
            backends: BackendsConfig::default(),
            llm: LlmSection::default(),
            sessions: SessionLimits::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::Env {
        var: var.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    /// Defaults, overlaid by `file` if given, overlaid by the process
    /// environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_owned(),
                    source,
                })?;
                Self::from_toml(&text, path)?
            }
            None => Self::default(),
        };
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Applies recognised `LOOPSMITH_*` variables; others are ignored.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (var, value) in vars {
            match var.as_str() {
                "LOOPSMITH_ASSET_ROOT" => self.asset_root = PathBuf::from(value),
                "LOOPSMITH_BIND" => self.bind = value,
                "LOOPSMITH_SEED" => self.seed = Some(parse_env(&var, &value)?),
                "LOOPSMITH_SIMILARITY_THRESHOLD" => {
                    self.engine.tools.similarity_threshold = parse_env(&var, &value)?
                }
                "LOOPSMITH_MAX_RETRIES" => self.engine.tools.max_retries = parse_env(&var, &value)?,
                "LOOPSMITH_MAX_ITERATIONS" => self.engine.max_iterations = parse_env(&var, &value)?,
                "LOOPSMITH_BACKEND_KIND" => {
                    self.backends.default.kind = match value.trim() {
                        "mock" => BackendKind::Mock,
                        "remote" => BackendKind::Remote,
                        _ => {
                            return Err(ConfigError::Env {
                                var,
                                value,
                                reason: "expected 'mock' or 'remote'".into(),
                            })
                        }
                    }
                }
                "LOOPSMITH_BACKEND_ENDPOINT" => self.backends.default.endpoint = Some(value),
                "LOOPSMITH_BACKEND_TIMEOUT" => self.backends.default.timeout_seconds = parse_env(&var, &value)?,
                "LOOPSMITH_LLM_KIND" => {
                    self.llm.kind = match value.trim() {
                        "scripted" => LlmKind::Scripted,
                        "remote" => LlmKind::Remote,
                        _ => {
                            return Err(ConfigError::Env {
                                var,
                                value,
                                reason: "expected 'scripted' or 'remote'".into(),
                            })
                        }
                    }
                }
                "LOOPSMITH_LLM_ENDPOINT" => self.llm.remote.endpoint = value,
                "LOOPSMITH_LLM_MODEL" => self.llm.remote.model = value,
                "LOOPSMITH_LLM_API_KEY" => self.llm.remote.api_key = Some(value),
                "LOOPSMITH_SESSION_CAPACITY" => self.sessions.capacity = parse_env(&var, &value)?,
                "LOOPSMITH_IDLE_TIMEOUT" => self.sessions.idle_timeout_seconds = parse_env(&var, &value)?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Offline operation: scripted planner and mock backends everywhere.
    pub fn force_mock(&mut self) {
        self.llm.kind = LlmKind::Scripted;
        self.backends = BackendsConfig {
            default: BackendConfig::mock(self.seed.unwrap_or_default()),
            overrides: Default::default(),
        };
    }

    /// Sets the seed and propagates it to every mock backend.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        for b in std::iter::once(&mut self.backends.default).chain(self.backends.overrides.values_mut()) {
            if b.kind == BackendKind::Mock {
                b.seed = Some(seed);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.engine.validate().map_err(ConfigError::Invalid)?;
        self.backends.default.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for b in self.backends.overrides.values() {
            b.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.sessions.capacity == 0 {
            return Err(ConfigError::Invalid("session capacity must be at least 1".into()));
        }
        Ok(())
    }

    pub fn id_mode(&self) -> IdMode {
        match self.seed {
            Some(seed) => IdMode::Seeded(seed),
            None => IdMode::Random,
        }
    }

    /// Builds the engine over an asset store rooted at `root`.
    pub fn build_engine_at(&self, root: &Path) -> Result<Engine, ConfigError> {
        self.validate()?;
        let store = AssetStore::open(root, self.id_mode()).map_err(|e| ConfigError::Engine(e.to_string()))?;
        let backends = Backends::from_config(&self.backends).map_err(|e| ConfigError::Engine(e.to_string()))?;
        let llm: Arc<dyn LanguageModel> = match self.llm.kind {
            LlmKind::Scripted => Arc::new(ScriptedPlanner::builtin(&ToolRegistry::builtin())),
            LlmKind::Remote => Arc::new(
                ChatCompletionClient::new(self.llm.remote.clone()).map_err(|e| ConfigError::Engine(e.to_string()))?,
            ),
        };
        Engine::new(llm, backends, Arc::new(store), self.engine.clone()).map_err(|e| ConfigError::Engine(e.to_string()))
    }

    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        self.build_engine_at(&self.asset_root)
    }
}
