use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatTurnMessage, RawReply, Role};
use crate::error::{Error, Result};
use crate::media;
use crate::transport::Transport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl OpenAiConfig {
    /// Reads `{prefix}_BASE_URL`, `{prefix}_MODEL` and `{prefix}_API_KEY`.
    pub fn from_env(prefix: &str) -> Result<Self> {
        let var = |name: &str| std::env::var(format!("{prefix}_{name}")).ok();
        Ok(Self {
            base_url: var("BASE_URL")
                .ok_or_else(|| Error::Config(format!("{prefix}_BASE_URL is not set")))?,
            model: var("MODEL").ok_or_else(|| Error::Config(format!("{prefix}_MODEL is not set")))?,
            api_key: var("API_KEY"),
        })
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct OpenAiBackend {
    config: OpenAiConfig,
    transport: Arc<dyn Transport>,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig, transport: Arc<dyn Transport>) -> Self {
        Self { config, transport }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, req: &ChatRequest<'_>) -> Result<Value> {
        let messages = req
            .messages
            .iter()
            .map(wire_message)
            .collect::<Result<Vec<_>>>()?;
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": req.params.temperature,
        });
        if let Some(max) = req.params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        if let Some(seed) = req.params.seed {
            body["seed"] = json!(seed);
        }
        if !req.tools.is_empty() {
            body["tools"] = Value::Array(
                req.tools
                    .iter()
                    .map(|t| {
                        json!({"type": "function", "function": {
                            "name": t.name, "description": t.description,
                            "parameters": t.parameters_schema()}})
                    })
                    .collect(),
            );
            body["tool_choice"] = json!("auto");
            body["parallel_tool_calls"] = json!(false);
        }
        if let Some(schema) = req.response_schema {
            body["response_format"] = json!({"type": "json_schema", "json_schema": {
                "name": schema.name, "schema": schema.json_schema(), "strict": true}});
        }
        Ok(body)
    }
}

fn wire_message(m: &ChatTurnMessage) -> Result<Value> {
    Ok(match m.role {
        Role::System => json!({"role": "system", "content": m.content}),
        Role::User if m.image_refs.is_empty() => json!({"role": "user", "content": m.content}),
        Role::User => {
            let mut parts = vec![json!({"type": "text", "text": m.content})];
            for r in &m.image_refs {
                parts.push(json!({"type": "image_url", "image_url": {"url": media::to_model_url(r)?}}));
            }
            json!({"role": "user", "content": parts})
        }
        Role::Assistant => match &m.tool_call {
            Some(c) => json!({"role": "assistant", "content": Value::Null, "tool_calls": [{
                "id": c.id, "type": "function",
                "function": {"name": c.name, "arguments": Value::Object(c.arguments.clone()).to_string()}}]}),
            None => json!({"role": "assistant", "content": m.content}),
        },
        Role::Tool => json!({"role": "tool", "tool_call_id": m.tool_call_id, "content": m.content}),
    })
}

/// Parses the first choice of a chat completion response.
pub(crate) fn parse_reply(resp: &Value) -> Result<RawReply> {
    let choice = resp
        .pointer("/choices/0")
        .ok_or_else(|| Error::TransportError("response has no choices".into()))?;
    if choice["finish_reason"] == "length" && choice.pointer("/message/content").is_none_or(Value::is_null) {
        return Err(Error::ContextOverflow("completion truncated".into()));
    }
    let message = &choice["message"];
    if let Some(call) = message.pointer("/tool_calls/0") {
        let name = call
            .pointer("/function/name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::TransportError("tool call without a name".into()))?;
        let arguments = match call.pointer("/function/arguments") {
            Some(Value::String(s)) => s.clone(),
            Some(v @ Value::Object(_)) => v.to_string(),
            _ => String::new(),
        };
        return Ok(RawReply::ToolCall {
            id: call["id"].as_str().map(str::to_string),
            name: name.to_string(),
            arguments,
        });
    }
    Ok(RawReply::Text {
        text: message["content"].as_str().unwrap_or_default().to_string(),
    })
}

impl ChatBackend for OpenAiBackend {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn send(&self, req: &ChatRequest<'_>) -> Result<RawReply> {
        let body = self.request_body(req)?;
        let resp = self
            .transport
            .post_json(&self.url(), self.config.api_key.as_deref(), &body)?;
        parse_reply(&resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Completion, Gateway, ParamSpec, ParamType, ToolSpec};
    use crate::transport::FnTransport;

    fn backend(reply: Value) -> OpenAiBackend {
        OpenAiBackend::new(
            OpenAiConfig {
                base_url: "http://llm.local/v1/".into(),
                model: "test-model".into(),
                api_key: None,
            },
            Arc::new(FnTransport(move |url: &str, body: &Value| {
                assert_eq!(url, "http://llm.local/v1/chat/completions");
                assert_eq!(body["model"], "test-model");
                Ok(reply.clone())
            })),
        )
    }

    #[test]
    fn parses_tool_call_payload() {
        let gw = Gateway::new(Arc::new(backend(json!({"choices": [{"message": {
            "role": "assistant", "content": null,
            "tool_calls": [{"id": "abc", "type": "function",
                "function": {"name": "query_memory", "arguments": "{\"request\":\"dog\"}"}}]},
            "finish_reason": "tool_calls"}]}))));
        let tool = ToolSpec::new(
            "query_memory",
            "d",
            vec![ParamSpec::required("request", ParamType::String, "r")],
        );
        let out = gw
            .complete(&[ChatTurnMessage::system("s"), ChatTurnMessage::user("u")], &[tool])
            .unwrap();
        let Completion::ToolCall { call } = out else { panic!() };
        assert_eq!(call.id, "abc");
        assert_eq!(call.arguments["request"], "dog");
    }

    #[test]
    fn parses_text() {
        let reply = parse_reply(&json!({"choices": [{"message": {"content": "hello"}, "finish_reason": "stop"}]}));
        assert_eq!(reply.unwrap(), RawReply::Text { text: "hello".into() });
    }

    #[test]
    fn wire_format_for_tool_transcript() {
        let msgs = [ChatTurnMessage::system("s"),
            ChatTurnMessage::assistant_tool_call(crate::llm::ToolCall {
                id: "c1".into(),
                name: "t".into(),
                arguments: serde_json::Map::new(),
            }),
            ChatTurnMessage::tool_result("c1", "{}")];
        let wire: Vec<Value> = msgs.iter().map(|m| wire_message(m).unwrap()).collect();
        assert_eq!(wire[1]["tool_calls"][0]["function"]["arguments"], "{}");
        assert_eq!(wire[2]["tool_call_id"], "c1");
    }
}
