//! TOML configuration shared by the service, the CLI and the eval harness.
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chat_agent::ChatAgentConfig;
use crate::embedding::{DiskCache, Embedder, EmbedderConfig, ProviderKind, RemoteEmbedder, RemoteEmbedderConfig};
use crate::error::{Error, Result};
use crate::llm::{DecodeParams, Gateway, OpenAiBackend, OpenAiConfig, RuleSet, TraceLog};
use crate::memory_manager::MemoryManagerConfig;
use crate::prompts;
use crate::retrieval::RetrievalConfig;
use crate::transport::HttpTransport;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub memory_manager: MemoryManagerConfig,
    #[serde(default)]
    pub chat_agent: ChatAgentConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub prompts: PromptFiles,
    #[serde(default)]
    pub service: ServiceConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    /// Root for raw logs and semantic journals. `None` keeps everything in memory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// fsync every raw-log record.
    #[serde(default = "yes")]
    pub fsync: bool,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self { data_dir: None, fsync: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    /// Rule file for the scripted backend.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    /// Environment prefix for the openai backend (`{prefix}_BASE_URL`, ...).
    #[serde(default = "default_env_prefix")]
    pub env_prefix: String,
    /// JSONL file receiving every request and response.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_seed")]
    pub seed: Option<u64>,
}

fn default_backend() -> BackendKind {
    BackendKind::Scripted
}
fn default_env_prefix() -> String {
    "M2A_LLM".into()
}
fn default_seed() -> Option<u64> {
    Some(0)
}
fn yes() -> bool {
    true
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: default_backend(),
            rules: None,
            env_prefix: default_env_prefix(),
            trace: None,
            temperature: 0.0,
            max_tokens: None,
            seed: default_seed(),
        }
    }
}

impl GatewayConfig {
    pub fn scripted(rules: impl Into<PathBuf>) -> Self {
        Self {
            rules: Some(rules.into()),
            ..Self::default()
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            return Err(Error::Config(format!("{field}.temperature must be within [0, 2]")));
        }
        if self.backend == BackendKind::Scripted && self.rules.is_none() {
            return Err(Error::Config(format!("{field}.rules is required for the scripted backend")));
        }
        if self.env_prefix.trim().is_empty() {
            return Err(Error::Config(format!("{field}.env_prefix must not be empty")));
        }
        Ok(())
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }

    pub fn build(&self) -> Result<Gateway> {
        let gateway = match self.backend {
            BackendKind::Scripted => {
                let path = self
                    .rules
                    .as_ref()
                    .ok_or_else(|| Error::Config("gateway.rules is required for the scripted backend".into()))?;
                Gateway::scripted(RuleSet::from_file(path)?)
            }
            BackendKind::Openai => {
                let cfg = OpenAiConfig::from_env(&self.env_prefix)?;
                Gateway::new(Arc::new(OpenAiBackend::new(cfg, Arc::new(HttpTransport::new()))))
            }
        };
        let gateway = gateway.with_params(self.decode_params());
        Ok(match &self.trace {
            Some(path) => gateway.with_trace(Arc::new(TraceLog::to_file(path)?)),
            None => gateway,
        })
    }

    fn resolve(&mut self, base: &Path) {
        resolve(&mut self.rules, base);
        resolve(&mut self.trace, base);
    }
}

/// Overrides for the shipped prompt templates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptFiles {
    #[serde(default)]
    pub chat_agent: Option<PathBuf>,
    #[serde(default)]
    pub memory_manager: Option<PathBuf>,
    #[serde(default)]
    pub judge: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub chat_agent: String,
    pub memory_manager: String,
    pub judge: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            chat_agent: prompts::CHAT_AGENT.into(),
            memory_manager: prompts::MEMORY_MANAGER.into(),
            judge: prompts::JUDGE.into(),
        }
    }
}

impl PromptFiles {
    pub fn load(&self) -> Result<Prompts> {
        Ok(Prompts {
            chat_agent: prompts::load_or_default(self.chat_agent.as_deref(), prompts::CHAT_AGENT)?,
            memory_manager: prompts::load_or_default(self.memory_manager.as_deref(), prompts::MEMORY_MANAGER)?,
            judge: prompts::load_or_default(self.judge.as_deref(), prompts::JUDGE)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Static bearer token; `M2A_BEARER_TOKEN` takes precedence when set.
    #[serde(default, skip_serializing)]
    pub bearer_token: Option<String>,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}
fn default_page_size() -> usize {
    50
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            bearer_token: None,
            page_size: default_page_size(),
        }
    }
}

impl ServiceConfig {
    pub fn effective_token(&self) -> Option<String> {
        std::env::var("M2A_BEARER_TOKEN")
            .ok()
            .filter(|t| !t.is_empty())
            .or_else(|| self.bearer_token.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeConfig {
    pub id: String,
    pub gateway: GatewayConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Turns retrieved per question by the RAG baseline.
    #[serde(default = "default_rag_top_k")]
    pub rag_top_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub judges: Vec<JudgeConfig>,
}

fn default_rag_top_k() -> usize {
    5
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rag_top_k: default_rag_top_k(),
            seed: 0,
            judges: Vec::new(),
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.rag_top_k == 0 {
            return Err(Error::Config("eval.rag_top_k must be at least 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, j) in self.judges.iter().enumerate() {
            let field = format!("eval.judges[{i}]");
            if j.id.trim().is_empty() {
                return Err(Error::Config(format!("{field}.id must not be empty")));
            }
            if !seen.insert(j.id.as_str()) {
                return Err(Error::Config(format!("{field}.id `{}` is duplicated", j.id)));
            }
            j.gateway.validate(&field)?;
        }
        Ok(())
    }
}

fn resolve(path: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: AppConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(&mut self.storage.data_dir, base);
        resolve(&mut self.embedder.cache_dir, base);
        resolve(&mut self.prompts.chat_agent, base);
        resolve(&mut self.prompts.memory_manager, base);
        resolve(&mut self.prompts.judge, base);
        self.gateway.resolve(base);
        for j in &mut self.eval.judges {
            j.gateway.resolve(base);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.retrieval.validate()?;
        self.memory_manager.validate()?;
        self.chat_agent.validate()?;
        self.gateway.validate("gateway")?;
        if self.service.page_size == 0 {
            return Err(Error::Config("service.page_size must be at least 1".into()));
        }
        self.eval.validate()
    }

    /// The configured embedder. Remote captioning goes through `captioner`.
    pub fn build_embedder(&self, captioner: &Gateway) -> Result<Arc<dyn Embedder>> {
        let m = &self.embedder;
        Ok(match m.provider {
            ProviderKind::Deterministic => {
                Arc::new(crate::embedding::DeterministicEmbedder::new(m.text_dim, m.image_dim))
            }
            ProviderKind::Remote => {
                let mut e = RemoteEmbedder::new(
                    RemoteEmbedderConfig::from_env()?,
                    m.text_dim,
                    m.image_dim,
                    Arc::new(HttpTransport::new()),
                    captioner.clone(),
                );
                if let Some(dir) = &self.embedder.cache_dir {
                    e = e.with_cache(DiskCache::open(dir)?);
                }
                Arc::new(e)
            }
        })
    }
}
