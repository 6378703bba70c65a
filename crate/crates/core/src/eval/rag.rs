//! Single-pass RAG baseline: every turn embedded into a flat list, questions
//! answered from the top-k turns by cosine similarity.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, Embedder};
use crate::error::Result;
use crate::llm::{ChatTurnMessage, Completion, Gateway};

const SYSTEM_PROMPT: &str = "You answer questions about a long conversation. \
Use only the retrieved conversation excerpts. Answer briefly; if the excerpts do not contain the answer, say so.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagDoc {
    pub dia_id: String,
    pub timestamp: DateTime<Utc>,
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
    #[serde(default)]
    pub caption: Option<String>,
    pub vector: Vec<f64>,
}

impl RagDoc {
    /// What gets embedded and shown to the model.
    pub fn render(speaker: &str, text: &str, caption: Option<&str>) -> String {
        let mut s = format!("{speaker}: {text}");
        if let Some(c) = caption.filter(|c| !c.trim().is_empty()) {
            s.push_str(&format!(" [image: {c}]"));
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RagIndex {
    pub docs: Vec<RagDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagAnswer {
    pub text: String,
    pub retrieved: Vec<String>,
}

impl RagIndex {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_turn(
        &mut self,
        embedder: &dyn Embedder,
        dia_id: &str,
        timestamp: DateTime<Utc>,
        speaker: &str,
        text: &str,
        image_refs: Vec<String>,
        caption: Option<String>,
    ) -> Result<()> {
        let vector = embedder.embed_text(&RagDoc::render(speaker, text, caption.as_deref()))?;
        self.docs.push(RagDoc {
            dia_id: dia_id.to_string(),
            timestamp,
            speaker: speaker.to_string(),
            text: text.to_string(),
            image_refs,
            caption,
            vector,
        });
        Ok(())
    }

    /// Indices of the `k` most similar docs, best first; ties keep log order.
    pub fn top_k(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self.docs.iter().enumerate().map(|(i, d)| (i, dot(query, &d.vector))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    pub fn prompt(&self, hits: &[(usize, f64)], question: &str) -> Vec<ChatTurnMessage> {
        let mut ctx = String::new();
        let mut images = Vec::new();
        for &(i, _) in hits {
            let d = &self.docs[i];
            ctx.push_str(&format!(
                "[{}] {}\n",
                d.timestamp.format("%Y-%m-%d %H:%M"),
                RagDoc::render(&d.speaker, &d.text, d.caption.as_deref())
            ));
            images.extend(d.image_refs.iter().cloned());
        }
        if ctx.is_empty() {
            ctx.push_str("(no excerpts)\n");
        }
        let user = format!("Conversation excerpts:\n{ctx}\nQuestion: {question}\nAnswer:");
        vec![
            ChatTurnMessage::system(SYSTEM_PROMPT),
            ChatTurnMessage::user_with_images(user, images),
        ]
    }

    pub fn answer(&self, embedder: &dyn Embedder, gateway: &Gateway, question: &str, k: usize) -> Result<RagAnswer> {
        let hits = match embedder.embed_text(question) {
            Ok(q) => self.top_k(&q, k),
            Err(crate::Error::EmptyInput) => Vec::new(),
            Err(e) => return Err(e),
        };
        let text = match gateway.complete(&self.prompt(&hits, question), &[])? {
            Completion::Text { text } => text,
            Completion::ToolCall { call } => format!("(unexpected tool call {})", call.name),
        };
        Ok(RagAnswer {
            text,
            retrieved: hits.iter().map(|&(i, _)| self.docs[i].dia_id.clone()).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::eval::write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
