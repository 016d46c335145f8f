//! Output schemas for every structured request the pipelines make.
//!
//! Validation walks the parsed JSON by hand so that the first failure can be
//! reported with its JSON path; unknown object keys are rejected.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SchemaId {
    IcdAssignments,
    CptAssignments,
    NoteText,
    MetaDescription,
    CodeSelection,
    DescriptionList,
}

impl SchemaId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::IcdAssignments => "ICD_ASSIGNMENTS",
            SchemaId::CptAssignments => "CPT_ASSIGNMENTS",
            SchemaId::NoteText => "NOTE_TEXT",
            SchemaId::MetaDescription => "META_DESCRIPTION",
            SchemaId::CodeSelection => "CODE_SELECTION",
            SchemaId::DescriptionList => "DESCRIPTION_LIST",
        }
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemaId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| format!("unknown schema id {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Evidence {
    pub line_index: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcdAssignmentRecord {
    pub code: String,
    pub rationale: String,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CptAssignmentRecord {
    pub code: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteText {
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub structure: Vec<String>,
    pub style_notes: String,
    pub specialty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSelection {
    pub codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionList {
    pub descriptions: Vec<String>,
}

/// A payload that passed its schema validator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    IcdAssignments(Vec<IcdAssignmentRecord>),
    CptAssignments(Vec<CptAssignmentRecord>),
    NoteText(NoteText),
    MetaDescription(MetaRecord),
    CodeSelection(CodeSelection),
    DescriptionList(DescriptionList),
}

impl Payload {
    pub fn schema_id(&self) -> SchemaId {
        match self {
            Payload::IcdAssignments(_) => SchemaId::IcdAssignments,
            Payload::CptAssignments(_) => SchemaId::CptAssignments,
            Payload::NoteText(_) => SchemaId::NoteText,
            Payload::MetaDescription(_) => SchemaId::MetaDescription,
            Payload::CodeSelection(_) => SchemaId::CodeSelection,
            Payload::DescriptionList(_) => SchemaId::DescriptionList,
        }
    }

    /// Canonical compact JSON text.
    pub fn to_json_text(&self) -> String {
        let result = match self {
            Payload::IcdAssignments(v) => serde_json::to_string(v),
            Payload::CptAssignments(v) => serde_json::to_string(v),
            Payload::NoteText(v) => serde_json::to_string(v),
            Payload::MetaDescription(v) => serde_json::to_string(v),
            Payload::CodeSelection(v) => serde_json::to_string(v),
            Payload::DescriptionList(v) => serde_json::to_string(v),
        };
        result.expect("payload types always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaViolation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for SchemaViolation {}

fn violation(path: &str, message: impl Into<String>) -> SchemaViolation {
    SchemaViolation {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Strips a surrounding Markdown code fence, if present.
fn unfence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, body)| body).unwrap_or("");
        return rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    t
}

pub fn validate_schema(schema: SchemaId, text: &str) -> Result<Payload, SchemaViolation> {
    let value: Value = serde_json::from_str(unfence(text))
        .map_err(|e| violation("$", format!("invalid JSON: {e}")))?;
    match schema {
        SchemaId::IcdAssignments => {
            let items = array(&value, "$")?;
            for (i, item) in items.iter().enumerate() {
                let p = format!("$[{i}]");
                let obj = object(item, &p, &["code", "rationale", "evidence"], &[])?;
                non_empty_string(&obj["code"], &format!("{p}.code"))?;
                string(&obj["rationale"], &format!("{p}.rationale"))?;
                let ep = format!("{p}.evidence");
                let ev = object(&obj["evidence"], &ep, &["line_index"], &["quote"])?;
                let idx = array(&ev["line_index"], &format!("{ep}.line_index"))?;
                for (j, v) in idx.iter().enumerate() {
                    let jp = format!("{ep}.line_index[{j}]");
                    if v.as_u64().is_none() {
                        return Err(violation(
                            &jp,
                            format!("expected a non-negative integer, got {v}"),
                        ));
                    }
                }
                if let Some(q) = ev.get("quote") {
                    if !q.is_null() {
                        string(q, &format!("{ep}.quote"))?;
                    }
                }
            }
            Ok(Payload::IcdAssignments(typed(value)?))
        }
        SchemaId::CptAssignments => {
            let items = array(&value, "$")?;
            for (i, item) in items.iter().enumerate() {
                let p = format!("$[{i}]");
                let obj = object(item, &p, &["code", "rationale"], &[])?;
                non_empty_string(&obj["code"], &format!("{p}.code"))?;
                string(&obj["rationale"], &format!("{p}.rationale"))?;
            }
            Ok(Payload::CptAssignments(typed(value)?))
        }
        SchemaId::NoteText => {
            let obj = object(&value, "$", &["lines"], &[])?;
            let lines = string_list(&obj["lines"], "$.lines")?;
            if lines.is_empty() {
                return Err(violation("$.lines", "a note needs at least one line"));
            }
            Ok(Payload::NoteText(typed(value)?))
        }
        SchemaId::MetaDescription => {
            let obj = object(&value, "$", &["structure", "style_notes", "specialty"], &[])?;
            string_list(&obj["structure"], "$.structure")?;
            string(&obj["style_notes"], "$.style_notes")?;
            string(&obj["specialty"], "$.specialty")?;
            Ok(Payload::MetaDescription(typed(value)?))
        }
        SchemaId::CodeSelection => {
            let obj = object(&value, "$", &["codes"], &[])?;
            string_list(&obj["codes"], "$.codes")?;
            Ok(Payload::CodeSelection(typed(value)?))
        }
        SchemaId::DescriptionList => {
            let obj = object(&value, "$", &["descriptions"], &[])?;
            string_list(&obj["descriptions"], "$.descriptions")?;
            Ok(Payload::DescriptionList(typed(value)?))
        }
    }
}

fn typed<T: serde::de::DeserializeOwned>(value: Value) -> Result<T, SchemaViolation> {
    // Structure was checked above; quote:null is the only shape serde sees differently.
    serde_json::from_value(strip_null_quotes(value)).map_err(|e| violation("$", e.to_string()))
}

fn strip_null_quotes(mut value: Value) -> Value {
    if let Value::Array(items) = &mut value {
        for item in items {
            if let Some(ev) = item.get_mut("evidence").and_then(Value::as_object_mut) {
                if ev.get("quote").is_some_and(Value::is_null) {
                    ev.remove("quote");
                }
            }
        }
    }
    value
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, SchemaViolation> {
    v.as_array()
        .ok_or_else(|| violation(path, format!("expected an array, got {}", kind(v))))
}

fn object<'a>(
    v: &'a Value,
    path: &str,
    required: &[&str],
    optional: &[&str],
) -> Result<&'a Map<String, Value>, SchemaViolation> {
    let obj = v
        .as_object()
        .ok_or_else(|| violation(path, format!("expected an object, got {}", kind(v))))?;
    for key in required {
        if !obj.contains_key(*key) {
            return Err(violation(path, format!("missing required field {key:?}")));
        }
    }
    if let Some(extra) = obj
        .keys()
        .find(|k| !required.contains(&k.as_str()) && !optional.contains(&k.as_str()))
    {
        return Err(violation(&format!("{path}.{extra}"), "unknown field"));
    }
    Ok(obj)
}

fn string<'a>(v: &'a Value, path: &str) -> Result<&'a str, SchemaViolation> {
    v.as_str()
        .ok_or_else(|| violation(path, format!("expected a string, got {}", kind(v))))
}

fn non_empty_string<'a>(v: &'a Value, path: &str) -> Result<&'a str, SchemaViolation> {
    let s = string(v, path)?;
    if s.trim().is_empty() {
        return Err(violation(path, "must not be empty"));
    }
    Ok(s)
}

fn string_list<'a>(v: &'a Value, path: &str) -> Result<Vec<&'a str>, SchemaViolation> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, item)| string(item, &format!("{path}[{i}]")))
        .collect()
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}
