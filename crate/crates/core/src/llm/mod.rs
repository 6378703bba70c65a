//! Chat-completion-with-tools gateway.
//!
//! A [`Gateway`] wraps a [`ChatBackend`] (remote OpenAI-compatible service or
//! the scripted double), validates tool calls and structured replies, re-asks
//! once on malformed output, and records every exchange in a [`TraceLog`].

mod openai;
mod schema;
mod scripted;
mod trace;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub use openai::{OpenAiBackend, OpenAiConfig};
pub use schema::{validate_object, OutputSchema, ParamSpec, ParamType, ToolSpec};
pub use scripted::{Condition, Response, Rule, RuleSet, ScriptedBackend};
pub use trace::{TraceEvent, TraceLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurnMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatTurnMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            image_refs: Vec::new(),
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn user_with_images(content: impl Into<String>, image_refs: Vec<String>) -> Self {
        Self {
            image_refs,
            ..Self::plain(Role::User, content)
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_call(call: ToolCall) -> Self {
        Self {
            tool_call: Some(call),
            ..Self::plain(Role::Assistant, "")
        }
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: None,
            seed: Some(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Completion {
    Text { text: String },
    ToolCall { call: ToolCall },
}

pub struct ChatRequest<'a> {
    pub messages: &'a [ChatTurnMessage],
    pub tools: &'a [ToolSpec],
    pub params: &'a DecodeParams,
    pub response_schema: Option<&'a OutputSchema>,
}

/// What a backend hands back before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawReply {
    Text {
        text: String,
    },
    ToolCall {
        #[serde(default)]
        id: Option<String>,
        name: String,
        /// Raw JSON text of the arguments, as produced by the model.
        arguments: String,
    },
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, req: &ChatRequest<'_>) -> Result<RawReply>;
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    params: DecodeParams,
    trace: Arc<TraceLog>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("params", &self.params)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            params: DecodeParams::default(),
            trace: Arc::new(TraceLog::in_memory()),
        }
    }

    pub fn with_params(mut self, params: DecodeParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_trace(mut self, trace: Arc<TraceLog>) -> Self {
        self.trace = trace;
        self
    }

    pub fn scripted(rules: RuleSet) -> Self {
        Self::new(Arc::new(ScriptedBackend::new(rules)))
    }

    pub fn trace(&self) -> &Arc<TraceLog> {
        &self.trace
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    fn send(
        &self,
        messages: &[ChatTurnMessage],
        tools: &[ToolSpec],
        schema: Option<&OutputSchema>,
    ) -> Result<RawReply> {
        let req = ChatRequest {
            messages,
            tools,
            params: &self.params,
            response_schema: schema,
        };
        self.trace.request(self.backend.name(), messages, tools, schema);
        match self.backend.send(&req) {
            Ok(reply) => {
                self.trace.response(self.backend.name(), &reply);
                Ok(reply)
            }
            Err(e) => {
                self.trace.error(self.backend.name(), &e);
                Err(e)
            }
        }
    }

    /// One completion: free text, or a single validated tool call.
    pub fn complete(&self, messages: &[ChatTurnMessage], tools: &[ToolSpec]) -> Result<Completion> {
        check_request(messages, tools)?;
        let mut transcript = messages.to_vec();
        for attempt in 0..2 {
            match self.send(&transcript, tools, None)? {
                RawReply::Text { text } => return Ok(Completion::Text { text }),
                RawReply::ToolCall { id, name, arguments } => {
                    let id = id.unwrap_or_else(|| next_call_id(&transcript));
                    match validate_call(tools, &name, &arguments) {
                        Ok(arguments) => {
                            return Ok(Completion::ToolCall {
                                call: ToolCall { id, name, arguments },
                            })
                        }
                        Err(problems) if attempt == 0 => {
                            let bad = ToolCall {
                                id: id.clone(),
                                name: name.clone(),
                                arguments: Map::new(),
                            };
                            transcript.push(ChatTurnMessage::assistant_tool_call(bad));
                            transcript.push(ChatTurnMessage::tool_result(
                                id,
                                format!(
                                    "error: invalid call to `{name}`: {}. Retry with arguments matching the tool schema.",
                                    problems.join("; ")
                                ),
                            ));
                        }
                        Err(problems) => {
                            return Err(Error::MalformedToolArguments(format!(
                                "{name}: {}",
                                problems.join("; ")
                            )))
                        }
                    }
                }
            }
        }
        unreachable!("loop returns on second attempt")
    }

    /// A completion whose text must parse against `schema`.
    pub fn complete_structured(
        &self,
        messages: &[ChatTurnMessage],
        schema: &OutputSchema,
    ) -> Result<Map<String, Value>> {
        check_request(messages, &[])?;
        let mut transcript = messages.to_vec();
        let mut last = Vec::new();
        for _ in 0..2 {
            let raw = match self.send(&transcript, &[], Some(schema))? {
                RawReply::Text { text } => text,
                RawReply::ToolCall { name, .. } => {
                    last = vec![format!("expected a JSON reply, got a call to `{name}`")];
                    transcript.push(ChatTurnMessage::assistant(format!("(tool call {name})")));
                    transcript.push(ChatTurnMessage::user(reask_text(&last)));
                    continue;
                }
            };
            match schema.parse(&raw) {
                Ok(value) => return Ok(value),
                Err(problems) => {
                    transcript.push(ChatTurnMessage::assistant(raw));
                    transcript.push(ChatTurnMessage::user(reask_text(&problems)));
                    last = problems;
                }
            }
        }
        Err(Error::SchemaViolation(last.join("; ")))
    }

    /// A completion whose text must be a JSON document accepted by `check`.
    /// On rejection the violation list is sent back once before failing.
    pub fn complete_json<T>(
        &self,
        messages: &[ChatTurnMessage],
        check: impl Fn(Value) -> std::result::Result<T, Vec<String>>,
    ) -> Result<std::result::Result<T, Vec<String>>> {
        check_request(messages, &[])?;
        let mut transcript = messages.to_vec();
        let mut last = Vec::new();
        for _ in 0..2 {
            let raw = match self.send(&transcript, &[], None)? {
                RawReply::Text { text } => text,
                RawReply::ToolCall { name, .. } => format!("(tool call {name})"),
            };
            let outcome = serde_json::from_str::<Value>(schema::strip_fence(&raw))
                .map_err(|e| vec![format!("reply is not valid JSON: {e}")])
                .and_then(&check);
            match outcome {
                Ok(v) => return Ok(Ok(v)),
                Err(problems) => {
                    transcript.push(ChatTurnMessage::assistant(raw));
                    transcript.push(ChatTurnMessage::user(reask_text(&problems)));
                    last = problems;
                }
            }
        }
        Ok(Err(last))
    }
}

fn reask_text(problems: &[String]) -> String {
    format!(
        "Your previous reply was rejected:\n- {}\nReply again with output that satisfies every constraint.",
        problems.join("\n- ")
    )
}

fn check_request(messages: &[ChatTurnMessage], tools: &[ToolSpec]) -> Result<()> {
    match messages.first() {
        None => return Err(Error::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::System => {
            return Err(Error::InvalidRequest("first message must be the system prompt".into()))
        }
        _ => {}
    }
    for (i, t) in tools.iter().enumerate() {
        if tools[..i].iter().any(|o| o.name == t.name) {
            return Err(Error::InvalidRequest(format!("duplicate tool name `{}`", t.name)));
        }
    }
    let mut call_ids: Vec<&str> = Vec::new();
    for m in messages {
        if let Some(c) = &m.tool_call {
            call_ids.push(&c.id);
        }
        if m.role == Role::Tool {
            match &m.tool_call_id {
                Some(id) if call_ids.contains(&id.as_str()) => {}
                _ => {
                    return Err(Error::InvalidRequest(
                        "tool message without a matching prior tool call".into(),
                    ))
                }
            }
        }
    }
    Ok(())
}

fn validate_call(tools: &[ToolSpec], name: &str, raw_args: &str) -> std::result::Result<Map<String, Value>, Vec<String>> {
    let Some(spec) = tools.iter().find(|t| t.name == name) else {
        let offered: Vec<&str> = tools.iter().map(|t| t.name.as_str()).collect();
        return Err(vec![format!("unknown tool `{name}`; available: {offered:?}")]);
    };
    let args: Value = if raw_args.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(raw_args).map_err(|e| vec![format!("arguments are not valid JSON: {e}")])?
    };
    spec.validate(&args)
}

fn next_call_id(transcript: &[ChatTurnMessage]) -> String {
    let n = transcript.iter().filter(|m| m.tool_call.is_some()).count();
    format!("call_{n}")
}
