use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::llm::{ChatTurnMessage, Gateway, OutputSchema, ParamSpec, ParamType};
use crate::prompts::render_judge;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Correct,
    Wrong,
}

impl Label {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CORRECT" => Some(Label::Correct),
            "WRONG" => Some(Label::Wrong),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub label: Label,
    pub explanation: String,
    pub judge_id: String,
    /// The judge's output never parsed; the label was forced to WRONG.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub judge_failed: bool,
}

const GRADE_REQUEST: &str = "Grade the generated answer now.";

pub fn verdict_schema() -> OutputSchema {
    OutputSchema {
        name: "judge_verdict".into(),
        fields: vec![
            ParamSpec::required("label", ParamType::String, "CORRECT or WRONG").one_of(&["CORRECT", "WRONG"]),
            ParamSpec::optional("explanation", ParamType::String, "one-sentence reasoning"),
            ParamSpec::optional("reasoning", ParamType::String, "alias of explanation"),
        ],
        exclusive_tokens: vec!["CORRECT".into(), "WRONG".into()],
    }
}

/// Grades one answer. Unparseable judge output (after the gateway's single
/// re-ask) becomes a flagged WRONG; transport failures propagate.
pub fn judge(
    gateway: &Gateway,
    judge_id: &str,
    template: &str,
    question: &str,
    gold: &str,
    generated: &str,
) -> crate::Result<JudgeVerdict> {
    let prompt = render_judge(template, question, gold, generated);
    let messages = [ChatTurnMessage::system(prompt), ChatTurnMessage::user(GRADE_REQUEST)];
    match gateway.complete_structured(&messages, &verdict_schema()) {
        Ok(obj) => {
            let label = obj
                .get("label")
                .and_then(|v| v.as_str())
                .and_then(Label::parse)
                .unwrap_or(Label::Wrong);
            let explanation = ["explanation", "reasoning"]
                .iter()
                .find_map(|k| obj.get(*k).and_then(|v| v.as_str()))
                .unwrap_or_default()
                .to_string();
            Ok(JudgeVerdict {
                label,
                explanation,
                judge_id: judge_id.to_string(),
                judge_failed: false,
            })
        }
        Err(Error::SchemaViolation(why)) => Ok(JudgeVerdict {
            label: Label::Wrong,
            explanation: format!("judge output rejected: {why}"),
            judge_id: judge_id.to_string(),
            judge_failed: true,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::RuleSet;
    use crate::prompts::JUDGE;
    use serde_json::json;

    fn gateway(reply: &str) -> Gateway {
        let rules = json!({"rules": [{"respond": {"text": reply}}]});
        Gateway::scripted(RuleSet::from_json(&rules.to_string()).unwrap())
    }

    #[test]
    fn labels_are_case_insensitive() {
        let v = judge(&gateway(r#"{"label":"correct"}"#), "Q", JUDGE, "q", "a", "a").unwrap();
        assert_eq!(v.label, Label::Correct);
        let v = judge(&gateway(r#"{"label":"WRONG","explanation":"off topic"}"#), "Q", JUDGE, "q", "a", "b").unwrap();
        assert_eq!(v.label, Label::Wrong);
        assert_eq!(v.explanation, "off topic");
        assert!(!v.judge_failed);
    }

    #[test]
    fn garbage_is_flagged_wrong() {
        let v = judge(&gateway("I think it is fine"), "G", JUDGE, "q", "a", "a").unwrap();
        assert_eq!(v.label, Label::Wrong);
        assert!(v.judge_failed);
        assert_eq!(v.judge_id, "G");
    }

    #[test]
    fn prompt_reaches_the_model_verbatim() {
        let g = gateway(r#"{"label":"CORRECT"}"#).with_trace(std::sync::Arc::new(crate::llm::TraceLog::in_memory()));
        judge(&g, "Q", JUDGE, "When did she move?", "May 7th", "7 May").unwrap();
        let sent = serde_json::to_string(&g.trace().events()[0].payload).unwrap();
        assert!(sent.contains("Gold answer: May 7th"));
        assert!(sent.contains("Generated answer: 7 May"));
    }
}
