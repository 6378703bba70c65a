//! Typed parameter schemas for tools and structured outputs, with a JSON
//! Schema rendering for the wire and a validator for model-produced values.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "items")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Object,
    Array(Box<ParamType>),
}

impl ParamType {
    pub fn array_of(inner: ParamType) -> Self {
        ParamType::Array(Box::new(inner))
    }

    fn json_schema(&self) -> Value {
        match self {
            ParamType::String => json!({"type": "string"}),
            ParamType::Integer => json!({"type": "integer"}),
            ParamType::Number => json!({"type": "number"}),
            ParamType::Boolean => json!({"type": "boolean"}),
            ParamType::Object => json!({"type": "object"}),
            ParamType::Array(inner) => json!({"type": "array", "items": inner.json_schema()}),
        }
    }

    fn check(&self, value: &Value, path: &str, errors: &mut Vec<String>) {
        let ok = match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.is_i64() || value.is_u64(),
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::Object => value.is_object(),
            ParamType::Array(inner) => match value.as_array() {
                Some(items) => {
                    for (i, item) in items.iter().enumerate() {
                        inner.check(item, &format!("{path}[{i}]"), errors);
                    }
                    true
                }
                None => false,
            },
        };
        if !ok {
            errors.push(format!("{path}: expected {}", self.describe()));
        }
    }

    fn describe(&self) -> String {
        match self {
            ParamType::String => "string".into(),
            ParamType::Integer => "integer".into(),
            ParamType::Number => "number".into(),
            ParamType::Boolean => "boolean".into(),
            ParamType::Object => "object".into(),
            ParamType::Array(inner) => format!("array of {}", inner.describe()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub ty: ParamType,
    pub description: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
}

impl ParamSpec {
    pub fn required(name: &str, ty: ParamType, description: &str) -> Self {
        Self {
            name: name.into(),
            ty,
            description: description.into(),
            required: true,
            allowed: None,
        }
    }

    pub fn optional(name: &str, ty: ParamType, description: &str) -> Self {
        Self {
            required: false,
            ..Self::required(name, ty, description)
        }
    }

    /// Restricts a string parameter to a fixed set (compared case-insensitively).
    pub fn one_of(mut self, allowed: &[&str]) -> Self {
        self.allowed = Some(allowed.iter().map(|s| s.to_string()).collect());
        self
    }
}

fn object_schema(params: &[ParamSpec]) -> Value {
    let mut props = Map::new();
    for p in params {
        let mut schema = p.ty.json_schema();
        schema["description"] = Value::String(p.description.clone());
        if let Some(allowed) = &p.allowed {
            schema["enum"] = json!(allowed);
        }
        props.insert(p.name.clone(), schema);
    }
    let required: Vec<&str> = params
        .iter()
        .filter(|p| p.required)
        .map(|p| p.name.as_str())
        .collect();
    json!({
        "type": "object",
        "properties": props,
        "required": required,
        "additionalProperties": false,
    })
}

/// Validates `value` as an object matching `params`. Unknown keys are errors.
pub fn validate_object(params: &[ParamSpec], value: &Value) -> Result<Map<String, Value>, Vec<String>> {
    let Some(obj) = value.as_object() else {
        return Err(vec!["expected a JSON object".into()]);
    };
    let mut errors = Vec::new();
    for p in params {
        match obj.get(p.name.as_str()) {
            None | Some(Value::Null) if p.required => {
                errors.push(format!("missing required field `{}`", p.name))
            }
            None | Some(Value::Null) => {}
            Some(v) => {
                p.ty.check(v, &p.name, &mut errors);
                if let (Some(allowed), Some(s)) = (&p.allowed, v.as_str()) {
                    if !allowed.iter().any(|a| a.eq_ignore_ascii_case(s.trim())) {
                        errors.push(format!("{}: `{s}` not one of {allowed:?}", p.name));
                    }
                }
            }
        }
    }
    for key in obj.keys() {
        if !params.iter().any(|p| &p.name == key) {
            errors.push(format!("unexpected field `{key}`"));
        }
    }
    if errors.is_empty() {
        Ok(obj.clone())
    } else {
        Err(errors)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str, params: Vec<ParamSpec>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params,
        }
    }

    pub fn parameters_schema(&self) -> Value {
        object_schema(&self.params)
    }

    pub fn validate(&self, args: &Value) -> Result<Map<String, Value>, Vec<String>> {
        validate_object(&self.params, args)
    }
}

/// Schema for a structured (JSON object) completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSchema {
    pub name: String,
    pub fields: Vec<ParamSpec>,
    /// Tokens that must not all appear in the raw reply at once.
    #[serde(default)]
    pub exclusive_tokens: Vec<String>,
}

impl OutputSchema {
    pub fn json_schema(&self) -> Value {
        object_schema(&self.fields)
    }

    /// Parses and validates a raw reply. Tolerates a fenced code block.
    pub fn parse(&self, raw: &str) -> Result<Map<String, Value>, Vec<String>> {
        if self.exclusive_tokens.len() > 1 && self.exclusive_tokens.iter().all(|t| raw.contains(t.as_str())) {
            return Err(vec![format!(
                "reply contains all of {:?}; include exactly one",
                self.exclusive_tokens
            )]);
        }
        let body = strip_fence(raw);
        let value: Value = match serde_json::from_str(body) {
            Ok(v) => v,
            // Prose around a single object is common; take the outermost braces.
            Err(e) => match (body.find('{'), body.rfind('}')) {
                (Some(a), Some(b)) if a < b => serde_json::from_str(&body[a..=b])
                    .map_err(|_| vec![format!("reply is not valid JSON: {e}")])?,
                _ => return Err(vec![format!("reply is not valid JSON: {e}")]),
            },
        };
        validate_object(&self.fields, &value)
    }
}

pub(crate) fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(inner) = rest.trim_end().strip_suffix("```") {
            return inner.trim();
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tool() -> ToolSpec {
        ToolSpec::new(
            "add_memory",
            "create",
            vec![
                ParamSpec::required("content", ParamType::String, "text"),
                ParamSpec::required(
                    "evidence_ids",
                    ParamType::array_of(ParamType::array_of(ParamType::Integer)),
                    "ranges",
                ),
                ParamSpec::optional("kind", ParamType::String, "kind").one_of(&["fact", "update_record"]),
            ],
        )
    }

    #[test]
    fn accepts_valid_args() {
        let args = json!({"content": "x", "evidence_ids": [[1, 2]], "kind": "FACT"});
        assert!(tool().validate(&args).is_ok());
    }

    #[test]
    fn reports_each_problem() {
        let args = json!({"evidence_ids": [["a"]], "kind": "other", "extra": 1});
        let errs = tool().validate(&args).unwrap_err();
        assert_eq!(errs.len(), 4, "{errs:?}");
    }

    #[test]
    fn schema_rendering_lists_required() {
        let s = tool().parameters_schema();
        assert_eq!(s["required"], json!(["content", "evidence_ids"]));
        assert_eq!(s["properties"]["evidence_ids"]["items"]["items"]["type"], "integer");
    }

    #[test]
    fn output_schema_handles_fences_and_exclusive_tokens() {
        let schema = OutputSchema {
            name: "judge".into(),
            fields: vec![ParamSpec::required("label", ParamType::String, "l")],
            exclusive_tokens: vec!["CORRECT".into(), "WRONG".into()],
        };
        assert!(schema.parse("```json\n{\"label\":\"CORRECT\"}\n```").is_ok());
        assert!(schema.parse("correct").is_err());
        assert!(schema.parse(r#"{"label":"CORRECT or WRONG"}"#).is_err());
        assert!(schema.parse("Same date, different format.\n{\"label\": \"CORRECT\"}").is_ok());
    }
}
