//! Default system prompts, shipped as template files.

use std::path::Path;

use crate::error::{Error, Result};

pub const CHAT_AGENT: &str = include_str!("../prompts/chat_agent.txt");
pub const MEMORY_MANAGER: &str = include_str!("../prompts/memory_manager.txt");
/// Placeholders: `{question}`, `{gold_answer}`, `{generated_answer}`.
pub const JUDGE: &str = include_str!("../prompts/judge.txt");

/// Bumped whenever a tool's name or parameters change.
pub const TOOL_SCHEMA_VERSION: u32 = 1;

/// A prompt override file, or the built-in default when `path` is `None`.
pub fn load_or_default(path: Option<&Path>, default: &str) -> Result<String> {
    match path {
        None => Ok(default.to_string()),
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("prompt file {}: {e}", p.display()))),
    }
}

pub fn render_judge(template: &str, question: &str, gold_answer: &str, generated_answer: &str) -> String {
    // Single pass so that braces inside the values are never re-expanded.
    let mut out = String::with_capacity(template.len() + question.len() + gold_answer.len() + generated_answer.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let (value, used) = [
            ("{question}", question),
            ("{gold_answer}", gold_answer),
            ("{generated_answer}", generated_answer),
        ]
        .iter()
        .find(|(key, _)| tail.starts_with(key))
        .map(|(key, v)| (*v, key.len()))
        .unwrap_or(("{", 1));
        out.push_str(value);
        rest = &tail[used..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn judge_template_fills_all_slots() {
        let p = render_judge(JUDGE, "When?", "May 7th", "on {question} 7 May");
        assert!(p.contains("Question: When?"));
        assert!(p.contains("Gold answer: May 7th"));
        assert!(p.contains("Generated answer: on {question} 7 May"));
        assert!(!p.contains("{gold_answer}"));
    }

    #[test]
    fn templates_name_their_tools() {
        for tool in ["query_memory", "update_memory"] {
            assert!(CHAT_AGENT.contains(tool));
        }
        for tool in ["search_semantic_memories", "fetch_raw_messages", "add_memory", "delete_memory"] {
            assert!(MEMORY_MANAGER.contains(tool));
        }
    }
}
