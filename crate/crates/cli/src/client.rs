//! Minimal blocking client for the service, used by `m2a chat`.

use std::io::BufRead;

use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SseEvent {
    pub event: String,
    pub data: String,
}

/// Reads `text/event-stream` frames: `event:` and `data:` lines, blank-line
/// terminated; comments (`:`) are skipped and multi-line data is joined by `\n`.
pub struct SseReader<R> {
    inner: R,
}

impl<R: BufRead> SseReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }
}

impl<R: BufRead> Iterator for SseReader<R> {
    type Item = std::io::Result<SseEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut event = String::new();
        let mut data: Vec<String> = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            match self.inner.read_line(&mut line) {
                Err(e) => return Some(Err(e)),
                Ok(0) => {
                    return (!data.is_empty()).then(|| {
                        Ok(SseEvent {
                            event: std::mem::take(&mut event),
                            data: data.join("\n"),
                        })
                    })
                }
                Ok(_) => {}
            }
            let l = line.trim_end_matches(['\r', '\n']);
            if l.is_empty() {
                if data.is_empty() && event.is_empty() {
                    continue;
                }
                let name = if event.is_empty() { "message".to_string() } else { event };
                return Some(Ok(SseEvent {
                    event: name,
                    data: data.join("\n"),
                }));
            }
            if l.starts_with(':') {
                continue;
            }
            let (field, value) = l.split_once(':').unwrap_or((l, ""));
            let value = value.strip_prefix(' ').unwrap_or(value);
            match field {
                "event" => event = value.to_string(),
                "data" => data.push(value.to_string()),
                _ => {}
            }
        }
    }
}

pub fn parse_sse(text: &str) -> Vec<SseEvent> {
    SseReader::new(text.as_bytes()).filter_map(Result::ok).collect()
}

pub struct ChatClient {
    base: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl ChatClient {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Result<Self, CliError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(None)
            .build()
            .map_err(|e| CliError::Http(e.to_string()))?;
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            token,
            http,
        })
    }

    fn request(&self, method: reqwest::Method, path: &str) -> reqwest::blocking::RequestBuilder {
        let rb = self.http.request(method, format!("{}{path}", self.base));
        match &self.token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    fn check(resp: reqwest::blocking::Response) -> Result<reqwest::blocking::Response, CliError> {
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let body = resp.text().unwrap_or_default();
        let message = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
            .unwrap_or(body);
        Err(CliError::Api { status, message })
    }

    pub fn ensure_session(&self, conversation_id: &str) -> Result<Value, CliError> {
        let resp = self
            .request(reqwest::Method::POST, "/v1/sessions")
            .json(&json!({ "conversation_id": conversation_id }))
            .send()
            .map_err(|e| CliError::Http(e.to_string()))?;
        Self::check(resp)?.json().map_err(|e| CliError::Http(e.to_string()))
    }

    /// Sends one turn; `on_event` sees every SSE frame. Returns the final
    /// `TurnResult` payload.
    pub fn send(
        &self,
        conversation_id: &str,
        text: &str,
        image_refs: &[String],
        on_event: &mut dyn FnMut(&SseEvent),
    ) -> Result<Value, CliError> {
        let resp = self
            .request(reqwest::Method::POST, &format!("/v1/chat/{conversation_id}"))
            .json(&json!({ "text": text, "image_refs": image_refs }))
            .send()
            .map_err(|e| CliError::Http(e.to_string()))?;
        let resp = Self::check(resp)?;
        for ev in SseReader::new(std::io::BufReader::new(resp)) {
            let ev = ev?;
            on_event(&ev);
            match ev.event.as_str() {
                "final" => return serde_json::from_str(&ev.data).map_err(|e| CliError::Http(e.to_string())),
                "error" => {
                    let v: Value = serde_json::from_str(&ev.data).unwrap_or_default();
                    return Err(CliError::Api {
                        status: v.pointer("/error/status").and_then(Value::as_u64).unwrap_or(500) as u16,
                        message: v
                            .pointer("/error/message")
                            .and_then(Value::as_str)
                            .unwrap_or("turn failed")
                            .to_string(),
                    });
                }
                _ => {}
            }
        }
        Err(CliError::Http("stream ended without a final event".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_are_split_on_blank_lines() {
        let text = "event: delta\ndata: {\"text\":\"Hi \"}\n\n: keep-alive\n\nevent: final\ndata: {\"a\":1}\n\n";
        let evs = parse_sse(text);
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[0].event, "delta");
        assert_eq!(evs[0].data, "{\"text\":\"Hi \"}");
        assert_eq!(evs[1].event, "final");
    }

    #[test]
    fn multi_line_data_and_default_name() {
        let evs = parse_sse("data: a\ndata: b\n\ndata:c");
        assert_eq!(evs[0], SseEvent { event: "message".into(), data: "a\nb".into() });
        assert_eq!(evs[1].data, "c");
    }
}
