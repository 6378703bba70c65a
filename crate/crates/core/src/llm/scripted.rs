//! Deterministic chat backend driven by a rule file.
//!
//! A rule file is a JSON document:
//!
//! ```json
//! {
//!   "rules": [
//!     { "name": "recall",
//!       "when": { "system_contains": "memory management agent",
//!                 "last_role": "user" },
//!       "respond": { "tool_call": { "name": "search_semantic_memories",
//!                                   "arguments": { "query": "{{user:/request}}" } } } }
//!   ],
//!   "default": { "text": "OK." }
//! }
//! ```
//!
//! The first rule whose conditions all hold wins; without a match the default
//! response (or `"OK."`) is returned. The backend keeps no state, so its reply
//! is a pure function of the rule set and the transcript.
//!
//! Responses may reference earlier messages. A string that is exactly
//! `$src:/json/pointer` is replaced by the referenced JSON value; `{{src:/ptr}}`
//! inside a longer string is replaced by its text. `src` is `user` (latest
//! user message), `tool` (latest tool result), or `tool1`, `tool2`, `user1`, …
//! for earlier ones. Message contents are parsed as JSON when possible;
//! otherwise the pointer `""` yields the raw text.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatBackend, ChatRequest, ChatTurnMessage, RawReply, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub default: Option<Response>,
}

impl RuleSet {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("rule file: {e}")))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rules of `other` are tried after ours; our default wins when both set one.
    pub fn merged(mut self, other: RuleSet) -> Self {
        self.rules.extend(other.rules);
        if self.default.is_none() {
            self.default = other.default;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub when: Condition,
    pub respond: Response,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub system_contains: Option<String>,
    pub last_role: Option<Role>,
    pub last_contains: Option<String>,
    pub last_not_contains: Option<String>,
    pub last_user_contains: Option<String>,
    pub last_user_not_contains: Option<String>,
    /// Name of the tool whose result is the last message.
    pub last_tool: Option<String>,
    pub last_tool_contains: Option<String>,
    pub transcript_contains: Option<String>,
    /// Exact number of tool calls since the latest user message.
    pub calls_since_user: Option<usize>,
    /// Exact number of tool calls in the whole transcript.
    pub tool_calls: Option<usize>,
    pub tool_offered: Option<String>,
    pub tool_not_offered: Option<String>,
    pub no_tools: Option<bool>,
    pub structured: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Response {
    Text(String),
    ToolCall { name: String, arguments: Value },
    /// Arguments passed through as raw text (for exercising malformed output).
    RawToolCall { name: String, arguments: String },
    Error(String),
}

pub struct ScriptedBackend {
    rules: RuleSet,
}

impl ScriptedBackend {
    pub fn new(rules: RuleSet) -> Self {
        Self { rules }
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn send(&self, req: &ChatRequest<'_>) -> Result<RawReply> {
        let response = self
            .rules
            .rules
            .iter()
            .find(|r| r.when.matches(req))
            .map(|r| &r.respond)
            .or(self.rules.default.as_ref());
        let ctx = Context { messages: req.messages };
        match response {
            None => Ok(RawReply::Text { text: "OK.".into() }),
            Some(Response::Text(t)) => Ok(RawReply::Text {
                text: ctx.interpolate(t),
            }),
            Some(Response::ToolCall { name, arguments }) => Ok(RawReply::ToolCall {
                id: None,
                name: name.clone(),
                arguments: ctx.render(arguments).to_string(),
            }),
            Some(Response::RawToolCall { name, arguments }) => Ok(RawReply::ToolCall {
                id: None,
                name: name.clone(),
                arguments: ctx.interpolate(arguments),
            }),
            Some(Response::Error(msg)) => Err(Error::TransportError(msg.clone())),
        }
    }
}

fn tool_name_for<'a>(messages: &'a [ChatTurnMessage], call_id: &str) -> Option<&'a str> {
    messages
        .iter()
        .filter_map(|m| m.tool_call.as_ref())
        .find(|c| c.id == call_id)
        .map(|c| c.name.as_str())
}

impl Condition {
    fn matches(&self, req: &ChatRequest<'_>) -> bool {
        let msgs = req.messages;
        let last = msgs.last();
        let last_user = msgs.iter().rev().find(|m| m.role == Role::User);
        let last_user_idx = msgs.iter().rposition(|m| m.role == Role::User);
        let contains = |m: Option<&ChatTurnMessage>, s: &str| m.is_some_and(|m| m.content.contains(s));

        if let Some(s) = &self.system_contains {
            if !msgs.iter().any(|m| m.role == Role::System && m.content.contains(s.as_str())) {
                return false;
            }
        }
        if let Some(role) = self.last_role {
            if last.map(|m| m.role) != Some(role) {
                return false;
            }
        }
        if let Some(s) = &self.last_contains {
            if !contains(last, s) {
                return false;
            }
        }
        if let Some(s) = &self.last_not_contains {
            if contains(last, s) {
                return false;
            }
        }
        if let Some(s) = &self.last_user_contains {
            if !contains(last_user, s) {
                return false;
            }
        }
        if let Some(s) = &self.last_user_not_contains {
            if contains(last_user, s) {
                return false;
            }
        }
        if self.last_tool.is_some() || self.last_tool_contains.is_some() {
            let Some(m) = last.filter(|m| m.role == Role::Tool) else {
                return false;
            };
            if let Some(name) = &self.last_tool {
                let called = m.tool_call_id.as_deref().and_then(|id| tool_name_for(msgs, id));
                if called != Some(name.as_str()) {
                    return false;
                }
            }
            if let Some(s) = &self.last_tool_contains {
                if !m.content.contains(s.as_str()) {
                    return false;
                }
            }
        }
        if let Some(s) = &self.transcript_contains {
            if !msgs.iter().any(|m| m.role != Role::System && m.content.contains(s.as_str())) {
                return false;
            }
        }
        if let Some(n) = self.calls_since_user {
            let start = last_user_idx.map_or(0, |i| i + 1);
            if msgs[start..].iter().filter(|m| m.tool_call.is_some()).count() != n {
                return false;
            }
        }
        if let Some(n) = self.tool_calls {
            if msgs.iter().filter(|m| m.tool_call.is_some()).count() != n {
                return false;
            }
        }
        if let Some(t) = &self.tool_offered {
            if !req.tools.iter().any(|x| &x.name == t) {
                return false;
            }
        }
        if let Some(t) = &self.tool_not_offered {
            if req.tools.iter().any(|x| &x.name == t) {
                return false;
            }
        }
        if let Some(none) = self.no_tools {
            if req.tools.is_empty() != none {
                return false;
            }
        }
        if let Some(structured) = self.structured {
            if req.response_schema.is_some() != structured {
                return false;
            }
        }
        true
    }
}

struct Context<'a> {
    messages: &'a [ChatTurnMessage],
}

impl Context<'_> {
    fn source(&self, name: &str) -> Option<Value> {
        let (role, rest) = if let Some(r) = name.strip_prefix("tool") {
            (Role::Tool, r)
        } else {
            let r = name.strip_prefix("user")?;
            (Role::User, r)
        };
        let back: usize = if rest.is_empty() { 0 } else { rest.parse().ok()? };
        let msg = self.messages.iter().rev().filter(|m| m.role == role).nth(back)?;
        Some(serde_json::from_str(&msg.content).unwrap_or_else(|_| Value::String(msg.content.clone())))
    }

    fn lookup(&self, reference: &str) -> Option<Value> {
        let (src, ptr) = reference.split_once(':')?;
        self.source(src.trim())?.pointer(ptr.trim()).cloned()
    }

    fn render(&self, value: &Value) -> Value {
        match value {
            Value::String(s) => match s.strip_prefix('$') {
                Some(reference) if reference.contains(":/") || reference.ends_with(':') => {
                    self.lookup(reference).unwrap_or(Value::Null)
                }
                _ => Value::String(self.interpolate(s)),
            },
            Value::Array(items) => Value::Array(items.iter().map(|v| self.render(v)).collect()),
            Value::Object(map) => Value::Object(
                map.iter()
                    .map(|(k, v)| (k.clone(), self.render(v)))
                    .collect(),
            ),
            other => other.clone(),
        }
    }

    fn interpolate(&self, template: &str) -> String {
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                return out;
            };
            match self.lookup(&after[..end]) {
                Some(Value::String(s)) => out.push_str(&s),
                Some(Value::Null) | None => {}
                Some(v) => out.push_str(&v.to_string()),
            }
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{DecodeParams, ToolCall};
    use serde_json::{json, Map};

    fn send(rules: Value, messages: &[ChatTurnMessage]) -> RawReply {
        let backend = ScriptedBackend::new(serde_json::from_value(rules).unwrap());
        let params = DecodeParams::default();
        backend
            .send(&ChatRequest {
                messages,
                tools: &[],
                params: &params,
                response_schema: None,
            })
            .unwrap()
    }

    fn transcript() -> Vec<ChatTurnMessage> {
        vec![
            ChatTurnMessage::system("sys"),
            ChatTurnMessage::user(r#"{"request":"dog name","context":[{"id":4}]}"#),
            ChatTurnMessage::assistant_tool_call(ToolCall {
                id: "call_0".into(),
                name: "search".into(),
                arguments: Map::new(),
            }),
            ChatTurnMessage::tool_result("call_0", r#"{"results":[{"entry_id":"e1","evidence":[[4,7]]}]}"#),
        ]
    }

    #[test]
    fn whole_value_reference() {
        let reply = send(
            json!({"rules": [{"when": {"last_tool": "search"},
                "respond": {"tool_call": {"name": "fetch", "arguments": {"range": "$tool:/results/0/evidence/0"}}}}]}),
            &transcript(),
        );
        let RawReply::ToolCall { arguments, .. } = reply else { panic!() };
        assert_eq!(serde_json::from_str::<Value>(&arguments).unwrap(), json!({"range": [4, 7]}));
    }

    #[test]
    fn string_interpolation() {
        let reply = send(
            json!({"rules": [{"respond": {"text": "found {{tool:/results/0/entry_id}} for {{user:/request}} at {{user:/context/0/id}}{{tool:/missing}}"}}]}),
            &transcript(),
        );
        assert_eq!(reply, RawReply::Text { text: "found e1 for dog name at 4".into() });
    }

    #[test]
    fn call_counting_conditions() {
        let rules = json!({"rules": [
            {"when": {"calls_since_user": 0}, "respond": {"text": "zero"}},
            {"when": {"calls_since_user": 1, "last_tool": "nope"}, "respond": {"text": "wrong tool"}},
            {"when": {"calls_since_user": 1}, "respond": {"text": "one"}}
        ]});
        assert_eq!(send(rules.clone(), &transcript()), RawReply::Text { text: "one".into() });
        assert_eq!(send(rules, &transcript()[..2]), RawReply::Text { text: "zero".into() });
    }

    #[test]
    fn deterministic() {
        let rules = json!({"rules": [{"respond": {"text": "{{user:/request}}"}}]});
        assert_eq!(send(rules.clone(), &transcript()), send(rules, &transcript()));
    }

    #[test]
    fn rejects_unknown_condition_keys() {
        assert!(RuleSet::from_json(r#"{"rules":[{"when":{"bogus":1},"respond":{"text":"x"}}]}"#).is_err());
    }
}
