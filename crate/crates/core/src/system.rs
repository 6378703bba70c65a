//! Wiring: stores → retriever → MemoryManager → ChatAgent.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chat_agent::{ChatAgent, ChatAgentConfig};
use crate::config::{AppConfig, Prompts};
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::llm::Gateway;
use crate::memory_manager::{MemoryManager, MemoryManagerConfig};
use crate::raw_store::{Durability, RawMessageStore};
use crate::retrieval::{HybridRetriever, PathToggles, RetrievalConfig};
use crate::semantic_store::SemanticStore;

/// The evaluated systems. Every `M2a*` variant is the full system with
/// exactly one component switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    M2a,
    RagBaseline,
    M2aSemanticOnly,
    M2aSinglePass,
    M2aDenseOnly,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::M2a,
        SystemKind::RagBaseline,
        SystemKind::M2aSemanticOnly,
        SystemKind::M2aSinglePass,
        SystemKind::M2aDenseOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::M2a => "m2a",
            SystemKind::RagBaseline => "rag_baseline",
            SystemKind::M2aSemanticOnly => "m2a_semantic_only",
            SystemKind::M2aSinglePass => "m2a_single_pass",
            SystemKind::M2aDenseOnly => "m2a_dense_only",
        }
    }

    pub fn is_agentic(self) -> bool {
        self != SystemKind::RagBaseline
    }

    /// Applies this variant's switch to otherwise-full settings.
    pub fn apply(self, s: &mut AgentSettings) {
        match self {
            SystemKind::M2a | SystemKind::RagBaseline => {}
            SystemKind::M2aSemanticOnly => s.memory_manager.raw_fetch = false,
            SystemKind::M2aSinglePass => {
                s.memory_manager.single_pass = true;
                s.chat_agent.max_query_iterations = 1;
            }
            SystemKind::M2aDenseOnly => s.retrieval.paths = PathToggles::dense_only(),
        }
    }
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!("unknown system `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Agent-side knobs and prompts.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct AgentSettings {
    pub retrieval: RetrievalConfig,
    pub memory_manager: MemoryManagerConfig,
    pub chat_agent: ChatAgentConfig,
    pub prompts: Prompts,
}


impl AgentSettings {
    pub fn from_config(cfg: &AppConfig) -> Result<Self> {
        Ok(Self {
            retrieval: cfg.retrieval.clone(),
            memory_manager: cfg.memory_manager.clone(),
            chat_agent: cfg.chat_agent.clone(),
            prompts: cfg.prompts.load()?,
        })
    }

    pub fn for_system(mut self, kind: SystemKind) -> Self {
        kind.apply(&mut self);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.memory_manager.validate()?;
        self.chat_agent.validate()
    }
}

/// A fully wired memory system over one pair of stores.
#[derive(Clone)]
pub struct System {
    pub raw: Arc<RawMessageStore>,
    pub store: Arc<SemanticStore>,
    pub retriever: Arc<HybridRetriever>,
    pub memory: Arc<MemoryManager>,
    pub agent: Arc<ChatAgent>,
}

impl System {
    pub fn assemble(store: Arc<SemanticStore>, gateway: Gateway, settings: &AgentSettings) -> Result<Self> {
        settings.validate()?;
        let raw = store.raw().clone();
        let retriever = Arc::new(HybridRetriever::new(store.clone(), settings.retrieval.clone()));
        let memory = Arc::new(
            MemoryManager::new(retriever.clone(), gateway.clone(), settings.memory_manager.clone())
                .with_system_prompt(settings.prompts.memory_manager.clone()),
        );
        let agent = Arc::new(
            ChatAgent::new(memory.clone(), gateway, settings.chat_agent.clone())
                .with_system_prompt(settings.prompts.chat_agent.clone()),
        );
        Ok(Self {
            raw,
            store,
            retriever,
            memory,
            agent,
        })
    }

    pub fn in_memory(embedder: Arc<dyn Embedder>, gateway: Gateway, settings: &AgentSettings) -> Result<Self> {
        let raw = Arc::new(RawMessageStore::in_memory());
        Self::assemble(Arc::new(SemanticStore::in_memory(raw, embedder)), gateway, settings)
    }

    /// Persistent stores under `dir/raw` and `dir/semantic`.
    pub fn open(
        dir: &Path,
        fsync: bool,
        embedder: Arc<dyn Embedder>,
        gateway: Gateway,
        settings: &AgentSettings,
    ) -> Result<Self> {
        let durability = if fsync { Durability::Sync } else { Durability::Flush };
        let raw = Arc::new(RawMessageStore::open_with(dir.join("raw"), durability)?);
        let store = SemanticStore::open(dir.join("semantic"), raw, embedder)?;
        Self::assemble(Arc::new(store), gateway, settings)
    }

    /// Builds from a config file's storage section.
    pub fn from_config(
        cfg: &AppConfig,
        embedder: Arc<dyn Embedder>,
        gateway: Gateway,
        settings: &AgentSettings,
    ) -> Result<Self> {
        match &cfg.storage.data_dir {
            Some(dir) => Self::open(dir, cfg.storage.fsync, embedder, gateway, settings),
            None => Self::in_memory(embedder, gateway, settings),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in SystemKind::ALL {
            assert_eq!(k.as_str().parse::<SystemKind>().unwrap(), k);
            assert_eq!(serde_json::to_value(k).unwrap(), k.as_str());
        }
        assert!("m2a_fast".parse::<SystemKind>().is_err());
    }

    #[test]
    fn each_variant_switches_one_component() {
        let full = AgentSettings::default();
        let so = full.clone().for_system(SystemKind::M2aSemanticOnly);
        assert!(!so.memory_manager.raw_fetch);
        assert_eq!(so.retrieval, full.retrieval);

        let sp = full.clone().for_system(SystemKind::M2aSinglePass);
        assert!(sp.memory_manager.single_pass);
        assert_eq!(sp.chat_agent.max_query_iterations, 1);
        assert!(sp.memory_manager.raw_fetch);

        let d = full.clone().for_system(SystemKind::M2aDenseOnly);
        assert_eq!(d.retrieval.paths, PathToggles::dense_only());
        assert_eq!(d.memory_manager, full.memory_manager);

        assert_eq!(full.clone().for_system(SystemKind::M2a), full);
    }
}
