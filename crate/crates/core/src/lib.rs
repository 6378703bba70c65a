//! Dual-layer multimodal memory for long-horizon conversational agents.

pub mod chat_agent;
pub mod config;
pub mod corpus;
pub mod embedding;
mod error;
pub mod eval;
pub mod llm;
pub mod media;
pub mod memory_manager;
pub mod prompts;
pub mod raw_store;
pub mod retrieval;
pub mod semantic_store;
pub mod synthesis;
pub mod system;
pub mod text;
pub mod transport;

pub use error::{Error, Result};
pub use raw_store::{EvidenceRange, NewMessage, RawMessage, RawMessageStore};
pub use retrieval::{HybridRetriever, Query, RankedResult, RetrievalConfig};
pub use semantic_store::{EntryKind, NewEntry, SemanticEntry, SemanticStore};
pub use chat_agent::{ChatAgent, ChatAgentConfig, TurnInput, TurnOptions, TurnResult};
pub use config::AppConfig;
pub use corpus::{Conversation, Corpus, QaCategory, QaItem};
pub use embedding::{DeterministicEmbedder, Embedder};
pub use llm::{Gateway, RuleSet};
pub use memory_manager::{ManualEdit, MemoryManager, MemoryManagerConfig, UpdateOutcome};
pub use system::{AgentSettings, System, SystemKind};
