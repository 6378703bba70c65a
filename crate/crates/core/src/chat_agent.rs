//! Front-end agent: per turn it may query memory, generates the reply, and
//! may request a memory update. It has read access to the recent raw tail
//! only; everything older arrives through the memory manager.
//!
//! Transcript layout for one turn:
//!
//! ```text
//! system    chat prompt
//! user      recent conversation (JSON)
//! user      the new message (with images)
//! system    [stage: query]     tools: query_memory
//! ...       query calls and results
//! system    [stage: generate]  no tools
//! assistant reply
//! system    [stage: update]    tools: update_memory
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::llm::{ChatTurnMessage, Completion, Gateway, ParamSpec, ParamType, ToolSpec};
use crate::memory_manager::{MemoryAnswer, MemoryManager, UpdateOutcome};
use crate::prompts;
use crate::raw_store::{EvidenceRange, NewMessage, RawMessage};

pub const QUERY_TOOL: &str = "query_memory";
pub const UPDATE_TOOL: &str = "update_memory";

const QUERY_STAGE: &str = "[stage: query] Decide whether long-term memory is needed to answer the new message. \
Call query_memory with a clear, specific request, as many times as needed, or reply \"no query\".";
const GENERATE_STAGE: &str =
    "[stage: generate] With all retrieved memory + recent conversation, reply to the new message.";
const UPDATE_STAGE: &str = "[stage: update] Decide whether this exchange contains information worth remembering. \
Call update_memory with a precise instruction, or reply \"no update\".";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatAgentConfig {
    /// Raw messages the agent may read directly.
    #[serde(default = "default_history")]
    pub history_window: usize,
    #[serde(default = "default_query_iterations")]
    pub max_query_iterations: usize,
    /// Skip the query stage entirely.
    #[serde(default)]
    pub skip_query: bool,
    #[serde(default = "default_speaker")]
    pub assistant_speaker: String,
}

fn default_history() -> usize {
    10
}
fn default_query_iterations() -> usize {
    3
}
fn default_speaker() -> String {
    "assistant".into()
}

impl Default for ChatAgentConfig {
    fn default() -> Self {
        Self {
            history_window: default_history(),
            max_query_iterations: default_query_iterations(),
            skip_query: false,
            assistant_speaker: default_speaker(),
        }
    }
}

impl ChatAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history_window == 0 {
            return Err(Error::Config("chat_agent.history_window must be at least 1".into()));
        }
        if self.max_query_iterations == 0 && !self.skip_query {
            return Err(Error::Config("chat_agent.max_query_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnInput {
    pub conversation_id: String,
    #[serde(default)]
    pub user_text: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
    /// Defaults to now, clamped to the log head.
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    pub speaker: Option<String>,
    /// Caption to store for the images instead of generating one.
    #[serde(default)]
    pub image_caption: Option<String>,
}

impl TurnInput {
    pub fn new(conversation_id: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            user_text: user_text.into(),
            image_refs: Vec::new(),
            timestamp: None,
            speaker: None,
            image_caption: None,
        }
    }

    pub fn at(mut self, timestamp: DateTime<Utc>) -> Self {
        self.timestamp = Some(timestamp);
        self
    }

    pub fn from_speaker(mut self, speaker: impl Into<String>) -> Self {
        self.speaker = Some(speaker.into());
        self
    }

    pub fn with_images(mut self, image_refs: Vec<String>) -> Self {
        self.image_refs = image_refs;
        self
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.image_caption = Some(caption.into());
        self
    }
}

/// Which parts of the turn run. The default runs all three stages and logs
/// both turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnOptions {
    /// Append the user (and assistant) turns to the raw log.
    pub persist: bool,
    pub query: bool,
    pub generate: bool,
    pub update: bool,
}

impl Default for TurnOptions {
    fn default() -> Self {
        Self {
            persist: true,
            query: true,
            generate: true,
            update: true,
        }
    }
}

impl TurnOptions {
    /// Read-only question answering: nothing is written to either layer.
    pub fn question() -> Self {
        Self {
            persist: false,
            query: true,
            generate: true,
            update: false,
        }
    }

    /// Dialogue ingestion: log the turn and let the agent decide on updates.
    pub fn observe() -> Self {
        Self {
            persist: true,
            query: false,
            generate: false,
            update: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Query,
    Generate,
    Update,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: Stage,
    #[serde(default)]
    pub tool: Option<String>,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub request: String,
    pub synthesized_context: String,
    pub cited_entries: Vec<String>,
    pub fetched_ranges: Vec<EvidenceRange>,
    pub iterations_used: usize,
    pub partial: bool,
}

impl QuerySummary {
    fn new(request: String, a: &MemoryAnswer) -> Self {
        Self {
            request,
            synthesized_context: a.synthesized_context.clone(),
            cited_entries: a.cited_entries.clone(),
            fetched_ranges: a.fetched_ranges.clone(),
            iterations_used: a.iterations_used,
            partial: a.partial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub conversation_id: String,
    /// `None` when generation was disabled for this turn.
    pub assistant_text: Option<String>,
    pub memory_queries: Vec<QuerySummary>,
    pub update_requested: bool,
    pub update_outcome: Option<UpdateOutcome>,
    pub stage_trace: Vec<StageEvent>,
    pub user_message_id: Option<u64>,
    pub assistant_message_id: Option<u64>,
}

pub fn tool_specs() -> (ToolSpec, ToolSpec) {
    (
        ToolSpec {
            name: QUERY_TOOL.into(),
            description: "Search long-term memory for relevant information".into(),
            params: vec![
                ParamSpec::required("request", ParamType::String, "What to look up, stated specifically."),
                ParamSpec::optional("image_ref", ParamType::String, "Image URI to search with."),
            ],
        },
        ToolSpec {
            name: UPDATE_TOOL.into(),
            description: "Request memory updates for important information".into(),
            params: vec![ParamSpec::required(
                "instruction",
                ParamType::String,
                "What should be remembered, changed or forgotten.",
            )],
        },
    )
}

pub struct ChatAgent {
    memory: Arc<MemoryManager>,
    gateway: Gateway,
    config: ChatAgentConfig,
    system_prompt: String,
    sessions: Mutex<HashMap<String, String>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for ChatAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatAgent").field("config", &self.config).finish()
    }
}

impl ChatAgent {
    pub fn new(memory: Arc<MemoryManager>, gateway: Gateway, config: ChatAgentConfig) -> Self {
        Self {
            memory,
            gateway,
            config,
            system_prompt: prompts::CHAT_AGENT.to_string(),
            sessions: Mutex::new(HashMap::new()),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    pub fn memory(&self) -> &Arc<MemoryManager> {
        &self.memory
    }

    pub fn config(&self) -> &ChatAgentConfig {
        &self.config
    }

    /// Later appends in this conversation carry `session_id`.
    pub fn open_session(&self, conversation_id: &str, session_id: &str) {
        self.sessions
            .lock()
            .insert(conversation_id.to_string(), session_id.to_string());
    }

    fn current_session(&self, conversation_id: &str, recent: &[RawMessage]) -> String {
        if let Some(s) = self.sessions.lock().get(conversation_id) {
            return s.clone();
        }
        recent
            .last()
            .map(|m| m.session_id.clone())
            .unwrap_or_else(|| "session_1".into())
    }

    fn lock(&self, conversation_id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().entry(conversation_id.to_string()).or_default().clone()
    }

    /// Whether a turn is currently running for this conversation.
    pub fn is_busy(&self, conversation_id: &str) -> bool {
        self.lock(conversation_id).is_locked()
    }

    pub fn handle_turn(&self, input: TurnInput, opts: TurnOptions) -> Result<TurnResult> {
        self.handle_turn_with(input, opts, &mut |_| {})
    }

    /// As [`handle_turn`](Self::handle_turn), reporting each stage event as it happens.
    pub fn handle_turn_with(
        &self,
        input: TurnInput,
        opts: TurnOptions,
        on_event: &mut dyn FnMut(&StageEvent),
    ) -> Result<TurnResult> {
        if input.user_text.trim().is_empty() && input.image_refs.is_empty() {
            return Err(Error::InvalidRequest("a turn needs text or images".into()));
        }
        let conv = input.conversation_id.clone();
        let lock = self.lock(&conv);
        let _guard = lock.lock();
        let raw = self.memory.raw();

        let mut recent = raw.tail(&conv, self.config.history_window)?;
        let head = recent.last().map(|m| m.timestamp);
        let timestamp = input
            .timestamp
            .unwrap_or_else(Utc::now)
            .max(head.unwrap_or(DateTime::<Utc>::UNIX_EPOCH));
        let session_id = self.current_session(&conv, &recent);

        let mut result = TurnResult {
            conversation_id: conv.clone(),
            assistant_text: None,
            memory_queries: Vec::new(),
            update_requested: false,
            update_outcome: None,
            stage_trace: Vec::new(),
            user_message_id: None,
            assistant_message_id: None,
        };
        let mut emit = |result: &mut TurnResult, ev: StageEvent| {
            on_event(&ev);
            result.stage_trace.push(ev);
        };

        // The new message is logged first so it survives any later failure.
        if opts.persist {
            let msg = self.memory.ingest_captioned(
                &conv,
                NewMessage {
                    session_id: session_id.clone(),
                    timestamp,
                    speaker: input.speaker.clone().unwrap_or_else(|| "user".into()),
                    text: input.user_text.clone(),
                    image_refs: input.image_refs.clone(),
                },
                input.image_caption.as_deref(),
            )?;
            result.user_message_id = Some(msg.id);
            if recent.len() == self.config.history_window {
                recent.remove(0);
            }
        }

        let mut transcript = vec![
            ChatTurnMessage::system(self.system_prompt.clone()),
            ChatTurnMessage::user(render_recent(&recent)),
            ChatTurnMessage::user_with_images(input.user_text.clone(), input.image_refs.clone()),
        ];
        let (query_tool, update_tool) = tool_specs();

        if opts.query && !self.config.skip_query && self.config.max_query_iterations > 0 {
            transcript.push(ChatTurnMessage::system(QUERY_STAGE));
            let tools = [query_tool];
            for _ in 0..self.config.max_query_iterations {
                let call = match self.gateway.complete(&transcript, &tools)? {
                    Completion::Text { .. } => break,
                    Completion::ToolCall { call } => call,
                };
                let request = call.arguments.get("request").and_then(Value::as_str).unwrap_or_default().to_string();
                let image = call
                    .arguments
                    .get("image_ref")
                    .and_then(Value::as_str)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string);
                let req = self.memory.query_request(&conv, &request, image)?;
                let answer = self.memory.run_query(&req)?;
                let content = json!({
                    "synthesized_context": answer.synthesized_context,
                    "cited_entries": answer.cited_entries,
                    "partial": answer.partial,
                });
                emit(
                    &mut result,
                    StageEvent {
                        stage: Stage::Query,
                        tool: Some(QUERY_TOOL.into()),
                        detail: json!({
                            "request": request,
                            "cited_entries": answer.cited_entries,
                            "fetched_ranges": answer.fetched_ranges,
                            "iterations_used": answer.iterations_used,
                            "partial": answer.partial,
                            "steps": answer.steps,
                        }),
                    },
                );
                result.memory_queries.push(QuerySummary::new(request, &answer));
                let id = call.id.clone();
                transcript.push(ChatTurnMessage::assistant_tool_call(call));
                transcript.push(ChatTurnMessage::tool_result(id, content.to_string()));
            }
        }

        if opts.generate {
            transcript.push(ChatTurnMessage::system(GENERATE_STAGE));
            let text = match self.gateway.complete(&transcript, &[])? {
                Completion::Text { text } => text,
                Completion::ToolCall { call } => {
                    return Err(Error::MalformedToolArguments(format!("unexpected call to `{}` while generating", call.name)))
                }
            };
            emit(
                &mut result,
                StageEvent {
                    stage: Stage::Generate,
                    tool: None,
                    detail: json!({ "chars": text.chars().count(), "text": text }),
                },
            );
            if opts.persist {
                let id = raw.append(
                    &conv,
                    NewMessage {
                        session_id: session_id.clone(),
                        timestamp,
                        speaker: self.config.assistant_speaker.clone(),
                        text: text.clone(),
                        image_refs: Vec::new(),
                    },
                )?;
                result.assistant_message_id = Some(id);
            }
            transcript.push(ChatTurnMessage::assistant(text.clone()));
            result.assistant_text = Some(text);
        }

        if opts.update {
            transcript.push(ChatTurnMessage::system(UPDATE_STAGE));
            if let Completion::ToolCall { call } = self.gateway.complete(&transcript, &[update_tool])? {
                let instruction = call
                    .arguments
                    .get("instruction")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string();
                let outcome = self.memory.run_update(&self.memory.update_request(&conv, &instruction)?)?;
                emit(
                    &mut result,
                    StageEvent {
                        stage: Stage::Update,
                        tool: Some(UPDATE_TOOL.into()),
                        detail: json!({
                            "instruction": instruction,
                            "created": outcome.created,
                            "deleted": outcome.deleted,
                            "update_records": outcome.update_records,
                            "partial": outcome.partial,
                            "steps": outcome.steps,
                        }),
                    },
                );
                result.update_requested = true;
                result.update_outcome = Some(outcome);
            }
        }
        Ok(result)
    }
}

fn render_recent(recent: &[RawMessage]) -> String {
    let turns: Vec<Value> = recent
        .iter()
        .map(|m| {
            let mut v = json!({
                "id": m.id,
                "session": m.session_id,
                "time": m.timestamp.to_rfc3339(),
                "speaker": m.speaker,
                "text": m.text,
            });
            if let Some(c) = &m.caption {
                v["image_caption"] = json!(c);
            }
            v
        })
        .collect();
    json!({ "recent_conversation": turns }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::DeterministicEmbedder;
    use crate::llm::RuleSet;
    use crate::memory_manager::MemoryManagerConfig;
    use crate::raw_store::RawMessageStore;
    use crate::retrieval::{HybridRetriever, RetrievalConfig};
    use crate::semantic_store::SemanticStore;

    fn agent(rules: Value) -> ChatAgent {
        let raw = Arc::new(RawMessageStore::in_memory());
        let store = Arc::new(SemanticStore::in_memory(raw, Arc::new(DeterministicEmbedder::new(64, 64))));
        let retriever = Arc::new(HybridRetriever::new(store, RetrievalConfig::default()));
        let gateway = Gateway::scripted(RuleSet::from_json(&rules.to_string()).unwrap());
        let mm = Arc::new(MemoryManager::new(retriever, gateway.clone(), MemoryManagerConfig::default()));
        ChatAgent::new(mm, gateway, ChatAgentConfig::default())
    }

    #[test]
    fn greeting_skips_memory() {
        let a = agent(json!({"rules": [
            {"when": {"tool_offered": "query_memory"}, "respond": {"text": "no query"}},
            {"when": {"no_tools": true}, "respond": {"text": "Hello!"}},
            {"when": {"tool_offered": "update_memory"}, "respond": {"text": "no update"}}
        ]}));
        let r = a.handle_turn(TurnInput::new("c", "hi!"), TurnOptions::default()).unwrap();
        assert_eq!(r.assistant_text.as_deref(), Some("Hello!"));
        assert!(r.memory_queries.is_empty() && !r.update_requested);
        assert_eq!(a.memory().raw().len("c").unwrap(), 2);
    }

    #[test]
    fn question_turn_writes_nothing() {
        let a = agent(json!({"default": {"text": "fine"}}));
        let r = a.handle_turn(TurnInput::new("c", "what?"), TurnOptions::question()).unwrap();
        assert_eq!(r.assistant_text.as_deref(), Some("fine"));
        assert_eq!(a.memory().raw().len("c").unwrap(), 0);
    }

    #[test]
    fn observed_turn_only_updates() {
        let a = agent(json!({"rules": [
            {"when": {"tool_offered": "query_memory"},
             "respond": {"tool_call": {"name": "query_memory", "arguments": {"request": "anything"}}}},
            {"when": {"tool_offered": "update_memory"},
             "respond": {"tool_call": {"name": "update_memory", "arguments": {"instruction": "note it"}}}}
        ], "default": {"text": "done"}}));
        let r = a.handle_turn(TurnInput::new("c", "I moved to Oslo"), TurnOptions::observe()).unwrap();
        assert!(r.memory_queries.is_empty());
        assert!(r.assistant_text.is_none());
        assert!(r.update_requested);
        let stages: Vec<Stage> = r.stage_trace.iter().map(|e| e.stage).collect();
        assert_eq!(stages, vec![Stage::Update]);
        assert_eq!(a.memory().raw().len("c").unwrap(), 1);
    }

    #[test]
    fn empty_turn_rejected() {
        let a = agent(json!({}));
        assert!(a.handle_turn(TurnInput::new("c", " "), TurnOptions::default()).is_err());
    }

    #[test]
    fn sessions_tag_appends() {
        let a = agent(json!({"default": {"text": "ok"}}));
        a.open_session("c", "s1");
        a.handle_turn(TurnInput::new("c", "one"), TurnOptions::observe()).unwrap();
        a.open_session("c", "s2");
        a.open_session("c", "s2");
        a.handle_turn(TurnInput::new("c", "two"), TurnOptions::observe()).unwrap();
        let log = a.memory().raw().read_all("c").unwrap();
        assert_eq!(log[0].session_id, "s1");
        assert_eq!(log[1].session_id, "s2");
    }

    #[test]
    fn query_loop_is_capped() {
        let a = agent(json!({"rules": [
            {"when": {"tool_offered": "query_memory"}, "respond": {"tool_call": {"name": "query_memory", "arguments": {"request": "again"}}}},
            {"when": {"system_contains": "memory management agent"}, "respond": {"text": "nothing"}}
        ], "default": {"text": "ok"}}));
        let r = a.handle_turn(TurnInput::new("c", "loop"), TurnOptions::default()).unwrap();
        assert_eq!(r.memory_queries.len(), 3);
    }
}
