use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatTurnMessage, OutputSchema, RawReply, ToolSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub backend: String,
    pub direction: String,
    pub payload: Value,
}

/// Append-only record of every outbound request and inbound response.
pub struct TraceLog {
    inner: Mutex<TraceInner>,
}

struct TraceInner {
    events: Vec<TraceEvent>,
    file: Option<File>,
    keep_in_memory: bool,
}

impl TraceLog {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(TraceInner {
                events: Vec::new(),
                file: None,
                keep_in_memory: true,
            }),
        }
    }

    /// Appends JSON lines to `path`; events are not retained in memory.
    pub fn to_file(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(TraceInner {
                events: Vec::new(),
                file: Some(file),
                keep_in_memory: false,
            }),
        })
    }

    fn push(&self, backend: &str, direction: &str, payload: Value) {
        let mut inner = self.inner.lock();
        let seq = inner.events.len() as u64;
        let event = TraceEvent {
            seq,
            backend: backend.to_string(),
            direction: direction.to_string(),
            payload,
        };
        if let Some(file) = inner.file.as_mut() {
            if let Ok(mut line) = serde_json::to_vec(&event) {
                line.push(b'\n');
                if let Err(e) = file.write_all(&line) {
                    log::warn!("trace write failed: {e}");
                }
            }
        }
        // Sequence numbers stay dense even when events are file-only.
        if inner.keep_in_memory {
            inner.events.push(event);
        } else {
            inner.events.push(TraceEvent {
                payload: Value::Null,
                ..event
            });
        }
    }

    pub(super) fn request(
        &self,
        backend: &str,
        messages: &[ChatTurnMessage],
        tools: &[ToolSpec],
        schema: Option<&OutputSchema>,
    ) {
        let tool_names: Vec<&str> = tools.iter().map(|t| t.name.as_str()).collect();
        self.push(
            backend,
            "request",
            json!({"messages": messages, "tools": tool_names, "schema": schema.map(|s| &s.name)}),
        );
    }

    pub(super) fn response(&self, backend: &str, reply: &RawReply) {
        self.push(backend, "response", serde_json::to_value(reply).unwrap_or(Value::Null));
    }

    pub(super) fn error(&self, backend: &str, err: &Error) {
        self.push(backend, "error", json!({"error": err.to_string()}));
    }

    pub fn len(&self) -> usize {
        self.inner.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.inner.lock().events.clone()
    }
}
