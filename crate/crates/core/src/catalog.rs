//! Tool definitions in the function-calling JSON shape: loading (strict or
//! lenient), canonical saving, and LLM-backed enrichment of missing
//! descriptions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::canonical;
use crate::llm::{self, ChatBackend, ChatMessage, ChatRequest, GenerationParams, LlmError};
use crate::prompts;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("empty catalog")]
    Empty,
    #[error("duplicate tool name `{0}`")]
    DuplicateTool(String),
    #[error("tool #{index}: {message}")]
    Invalid { index: usize, message: String },
    #[error("enrichment of {tool}.{field} failed: {reason}")]
    Enrichment {
        tool: String,
        field: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadMode {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    String,
    Number,
    Integer,
    Boolean,
    Object,
    Array,
}

impl ValueType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "string" => ValueType::String,
            "number" => ValueType::Number,
            "integer" => ValueType::Integer,
            "boolean" => ValueType::Boolean,
            "object" => ValueType::Object,
            "array" => ValueType::Array,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Number => "number",
            ValueType::Integer => "integer",
            ValueType::Boolean => "boolean",
            ValueType::Object => "object",
            ValueType::Array => "array",
        }
    }

    /// Strict type check with no coercion; integers are accepted as numbers.
    pub fn accepts(&self, value: &Value) -> bool {
        match self {
            ValueType::String => value.is_string(),
            ValueType::Number => value.is_number(),
            ValueType::Integer => value.is_i64() || value.is_u64(),
            ValueType::Boolean => value.is_boolean(),
            ValueType::Object => value.is_object(),
            ValueType::Array => value.is_array(),
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub description: String,
    pub value_type: ValueType,
    pub required: bool,
    /// Any other schema keys (`items`, nested `properties`, `enum`, ...),
    /// kept opaque.
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSpec {
    pub name: String,
    pub description: String,
    pub value_type: ValueType,
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// Ordered by name; JSON objects carry no member order.
    pub parameters: Vec<ParameterSpec>,
    pub returns: Vec<ReturnSpec>,
}

/// A description left empty by a lenient load.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MissingField {
    Tool { tool: usize },
    Parameter { tool: usize, name: String },
    Return { tool: usize, name: String },
}

impl MissingField {
    pub fn tool_index(&self) -> usize {
        match self {
            MissingField::Tool { tool }
            | MissingField::Parameter { tool, .. }
            | MissingField::Return { tool, .. } => *tool,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MissingField::Tool { .. } => "description".into(),
            MissingField::Parameter { name, .. } => format!("parameters.{name}"),
            MissingField::Return { name, .. } => format!("results.{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolCatalog {
    pub tools: Vec<ToolSpec>,
    pub source: String,
    /// Empty descriptions accepted in lenient mode, in field order.
    pub flagged: Vec<MissingField>,
}

fn field_schema(value_type: ValueType, description: &str, extra: &BTreeMap<String, Value>) -> Value {
    let mut obj = Map::new();
    for (k, v) in extra {
        obj.insert(k.clone(), v.clone());
    }
    obj.insert("type".into(), json!(value_type.as_str()));
    obj.insert("description".into(), json!(description));
    Value::Object(obj)
}

impl ToolSpec {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn return_value(&self, name: &str) -> Option<&ReturnSpec> {
        self.returns.iter().find(|r| r.name == name)
    }

    pub fn required_parameters(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.parameters.iter().filter(|p| p.required)
    }

    /// The function-calling record, including `results`.
    pub fn to_record(&self) -> Value {
        let params: Map<String, Value> = self
            .parameters
            .iter()
            .map(|p| (p.name.clone(), field_schema(p.value_type, &p.description, &p.extra)))
            .collect();
        let required: Vec<&str> = self.required_parameters().map(|p| p.name.as_str()).collect();
        let results: Map<String, Value> = self
            .returns
            .iter()
            .map(|r| (r.name.clone(), field_schema(r.value_type, &r.description, &r.extra)))
            .collect();
        canonical::sort_keys(json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": params,
                    "required": required,
                },
                "results": {
                    "type": "object",
                    "properties": results,
                },
            }
        }))
    }

    /// The record without `results`, as sent in a chat request's `tools`.
    pub fn to_function_schema(&self) -> Value {
        let mut record = self.to_record();
        if let Some(f) = record.get_mut("function").and_then(Value::as_object_mut) {
            f.remove("results");
        }
        record
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("records serialize")
    }

    /// Parse one record. Empty descriptions are pushed onto `flagged` in
    /// lenient mode and rejected in strict mode.
    pub fn from_record(
        index: usize,
        record: &Value,
        mode: LoadMode,
        flagged: &mut Vec<MissingField>,
    ) -> Result<ToolSpec, CatalogError> {
        let invalid = |message: String| CatalogError::Invalid { index, message };
        let strict = mode == LoadMode::Strict;
        let obj = record
            .as_object()
            .ok_or_else(|| invalid("record is not a JSON object".into()))?;
        match obj.get("type").and_then(Value::as_str) {
            Some("function") => {}
            None if !strict => {}
            other => return Err(invalid(format!("expected type \"function\", got {other:?}"))),
        }
        let func = obj
            .get("function")
            .and_then(Value::as_object)
            .ok_or_else(|| invalid("missing `function` object".into()))?;
        let name = func
            .get("name")
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| invalid("missing or empty tool name".into()))?
            .to_string();
        let invalid = |message: String| CatalogError::Invalid {
            index,
            message: format!("{name}: {message}"),
        };

        let mut description_of = |value: Option<&Value>, field: MissingField, what: &str| {
            match value {
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(Value::String(_)) | None if !strict => {
                    flagged.push(field);
                    Ok(String::new())
                }
                Some(Value::String(_)) | None => Err(invalid(format!("missing description for {what}"))),
                Some(other) => Err(invalid(format!("description for {what} is not a string: {other}"))),
            }
        };

        let description = description_of(func.get("description"), MissingField::Tool { tool: index }, "tool")?;

        let fields = |section: &str| -> Result<Vec<(String, ValueType, Option<Value>, BTreeMap<String, Value>)>, CatalogError> {
            let block = match func.get(section) {
                Some(Value::Object(b)) => b,
                Some(_) => return Err(invalid(format!("`{section}` is not an object"))),
                None if strict => return Err(invalid(format!("missing `{section}`"))),
                None => return Ok(Vec::new()),
            };
            let props = match block.get("properties") {
                Some(Value::Object(p)) => p.clone(),
                Some(_) => return Err(invalid(format!("`{section}.properties` is not an object"))),
                None => Map::new(),
            };
            let mut out = Vec::new();
            for (fname, schema) in props {
                if fname.is_empty() {
                    return Err(invalid(format!("empty field name in `{section}`")));
                }
                let schema = schema
                    .as_object()
                    .ok_or_else(|| invalid(format!("`{section}.{fname}` is not an object")))?;
                let type_str = schema
                    .get("type")
                    .and_then(Value::as_str)
                    .ok_or_else(|| invalid(format!("`{section}.{fname}` has no type")))?;
                let value_type = ValueType::parse(type_str)
                    .ok_or_else(|| invalid(format!("unknown value_type `{type_str}` for `{section}.{fname}`")))?;
                let extra = schema
                    .iter()
                    .filter(|(k, _)| k.as_str() != "type" && k.as_str() != "description")
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                out.push((fname, value_type, schema.get("description").cloned(), extra));
            }
            Ok(out)
        };
        let raw_params = fields("parameters")?;
        let raw_returns = fields("results")?;

        let required: Vec<String> = match func.get("parameters").and_then(|p| p.get("required")) {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| invalid("`required` holds a non-string".into()))
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(invalid("`required` is not an array".into())),
        };
        for r in &required {
            if !raw_params.iter().any(|(n, ..)| n == r) {
                return Err(invalid(format!("required parameter `{r}` is not declared")));
            }
        }

        let mut parameters = Vec::with_capacity(raw_params.len());
        for (pname, value_type, desc, extra) in raw_params {
            let description = description_of(
                desc.as_ref(),
                MissingField::Parameter {
                    tool: index,
                    name: pname.clone(),
                },
                &format!("parameter `{pname}`"),
            )?;
            parameters.push(ParameterSpec {
                required: required.contains(&pname),
                name: pname,
                description,
                value_type,
                extra,
            });
        }
        let mut returns = Vec::with_capacity(raw_returns.len());
        for (rname, value_type, desc, extra) in raw_returns {
            let description = description_of(
                desc.as_ref(),
                MissingField::Return {
                    tool: index,
                    name: rname.clone(),
                },
                &format!("return value `{rname}`"),
            )?;
            returns.push(ReturnSpec {
                name: rname,
                description,
                value_type,
                extra,
            });
        }
        Ok(ToolSpec {
            name,
            description,
            parameters,
            returns,
        })
    }
}

impl ToolCatalog {
    pub fn from_tools(tools: Vec<ToolSpec>, source: impl Into<String>) -> Result<Self, CatalogError> {
        if tools.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut seen = HashSet::new();
        for t in &tools {
            if !seen.insert(t.name.as_str()) {
                return Err(CatalogError::DuplicateTool(t.name.clone()));
            }
        }
        Ok(ToolCatalog {
            tools,
            source: source.into(),
            flagged: Vec::new(),
        })
    }

    pub fn parse(text: &str, mode: LoadMode, source: impl Into<String>) -> Result<Self, CatalogError> {
        let value: Value = serde_json::from_str(text)?;
        let records = value.as_array().ok_or_else(|| CatalogError::Invalid {
            index: 0,
            message: "catalog is not a JSON array".into(),
        })?;
        if records.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut flagged = Vec::new();
        let tools = records
            .iter()
            .enumerate()
            .map(|(i, r)| ToolSpec::from_record(i, r, mode, &mut flagged))
            .collect::<Result<Vec<_>, _>>()?;
        let mut catalog = Self::from_tools(tools, source)?;
        catalog.flagged = flagged;
        Ok(catalog)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tools.iter().position(|t| t.name == name)
    }

    pub fn to_canonical_json(&self) -> String {
        let records: Vec<Value> = self.tools.iter().map(ToolSpec::to_record).collect();
        serde_json::to_string(&records).expect("records serialize")
    }

    /// SHA-256 of the canonical JSON; ties graph files to their catalog.
    pub fn digest(&self) -> String {
        canonical::sha256_hex(self.to_canonical_json().as_bytes())
    }
}

pub fn load_catalog(path: &Path, mode: LoadMode) -> Result<ToolCatalog, CatalogError> {
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ToolCatalog::parse(&text, mode, path.display().to_string())
}

/// Write the catalog as canonical JSON followed by a single LF.
pub fn save_catalog(catalog: &ToolCatalog, path: &Path) -> Result<(), CatalogError> {
    let mut text = catalog.to_canonical_json();
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone)]
pub struct EnrichOptions {
    /// Re-prompts after a failed attempt.
    pub retries: usize,
    pub params: GenerationParams,
    pub concurrency: usize,
}

impl Default for EnrichOptions {
    fn default() -> Self {
        EnrichOptions {
            retries: 2,
            params: GenerationParams {
                temperature: 0.0,
                ..GenerationParams::default()
            },
            concurrency: 4,
        }
    }
}

fn parse_enrichment(reply: &str) -> Result<String, String> {
    let value: Value = serde_json::from_str(reply.trim()).map_err(|e| format!("reply is not JSON: {e}"))?;
    match value.get("description").and_then(Value::as_str).map(str::trim) {
        Some(d) if !d.is_empty() => Ok(d.to_string()),
        _ => Err("reply has no non-empty `description` string".into()),
    }
}

async fn describe_field(
    catalog: &ToolCatalog,
    field: &MissingField,
    backend: &dyn ChatBackend,
    opts: &EnrichOptions,
) -> Result<String, CatalogError> {
    let tool = &catalog.tools[field.tool_index()];
    let fail = |reason: String| CatalogError::Enrichment {
        tool: tool.name.clone(),
        field: field.label(),
        reason,
    };
    let messages = vec![
        ChatMessage::system(prompts::ENRICH_SYSTEM),
        ChatMessage::user(prompts::render_enrich(&tool.canonical_json(), &field.label())),
    ];
    let request = ChatRequest::new(messages, opts.params.clone());
    let mut last = String::new();
    for _ in 0..=opts.retries {
        match llm::complete(backend, &request).await {
            Ok(reply) => match parse_enrichment(&reply.content) {
                Ok(d) => return Ok(d),
                Err(e) => last = e,
            },
            Err(e @ LlmError::RetriesExhausted { .. }) | Err(e @ LlmError::Transport(_)) => {
                return Err(fail(e.to_string()))
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(fail(format!("{} attempts failed; last error: {last}", opts.retries + 1)))
}

/// Fill every flagged description using `backend`. Names, types and
/// required flags are never touched. Results are applied in field order.
pub async fn enrich_catalog(
    catalog: &ToolCatalog,
    backend: &dyn ChatBackend,
    opts: &EnrichOptions,
) -> Result<ToolCatalog, CatalogError> {
    let descriptions: Vec<String> = stream::iter(catalog.flagged.iter())
        .map(|field| describe_field(catalog, field, backend, opts))
        .buffered(opts.concurrency.max(1))
        .try_collect()
        .await?;
    let mut out = catalog.clone();
    for (field, desc) in catalog.flagged.iter().zip(descriptions) {
        let tool = &mut out.tools[field.tool_index()];
        match field {
            MissingField::Tool { .. } => tool.description = desc,
            MissingField::Parameter { name, .. } => {
                if let Some(p) = tool.parameters.iter_mut().find(|p| &p.name == name) {
                    p.description = desc;
                }
            }
            MissingField::Return { name, .. } => {
                if let Some(r) = tool.returns.iter_mut().find(|r| &r.name == name) {
                    r.description = desc;
                }
            }
        }
    }
    out.flagged.clear();
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use super::tests_support::GETCURRENCY;
    use crate::llm::{ScriptRule, ScriptedBackend, ScriptedReply};


    #[test]
    fn figure_record_parses() {
        let c = ToolCatalog::parse(GETCURRENCY, LoadMode::Strict, "fig").unwrap();
        let t = &c.tools[0];
        assert_eq!(t.name, "getcurrency");
        let names: Vec<_> = t.parameters.iter().map(|p| (p.name.as_str(), p.value_type, p.required)).collect();
        assert_eq!(
            names,
            [("basecurrency", ValueType::String, true), ("targetcurrency", ValueType::String, true)]
        );
        let rets: Vec<_> = t.returns.iter().map(|r| (r.name.as_str(), r.value_type)).collect();
        assert_eq!(rets, [("exchangerate", ValueType::Number), ("last_updated", ValueType::String)]);
        assert!(c.flagged.is_empty());
    }

    #[test]
    fn empty_array_is_an_error() {
        assert!(matches!(ToolCatalog::parse("[]", LoadMode::Strict, "x"), Err(CatalogError::Empty)));
        assert!(matches!(ToolCatalog::parse("[", LoadMode::Strict, "x"), Err(CatalogError::Json(_))));
    }

    fn tool_json(name: &str, ptype: &str, pdesc: Option<&str>) -> Value {
        let mut p = json!({"type": ptype});
        if let Some(d) = pdesc {
            p["description"] = json!(d);
        }
        json!({"type": "function", "function": {
            "name": name, "description": "d",
            "parameters": {"type": "object", "properties": {"x": p}, "required": ["x"]},
            "results": {"type": "object", "properties": {}}
        }})
    }

    #[test]
    fn duplicate_and_unknown_type_rejected() {
        let dup = json!([tool_json("a", "string", Some("x")), tool_json("a", "string", Some("x"))]);
        assert!(matches!(
            ToolCatalog::parse(&dup.to_string(), LoadMode::Strict, "x"),
            Err(CatalogError::DuplicateTool(n)) if n == "a"
        ));
        let bad = json!([tool_json("a", "float", Some("x"))]);
        let err = ToolCatalog::parse(&bad.to_string(), LoadMode::Lenient, "x").unwrap_err();
        assert!(err.to_string().contains("unknown value_type `float`"), "{err}");
    }

    #[test]
    fn strict_rejects_missing_description_lenient_flags_it() {
        let c = json!([tool_json("a", "string", None)]).to_string();
        assert!(ToolCatalog::parse(&c, LoadMode::Strict, "x").is_err());
        let lenient = ToolCatalog::parse(&c, LoadMode::Lenient, "x").unwrap();
        assert_eq!(
            lenient.flagged,
            vec![MissingField::Parameter { tool: 0, name: "x".into() }]
        );
        assert_eq!(lenient.tools[0].parameters[0].description, "");
    }

    #[test]
    fn undeclared_required_rejected() {
        let mut t = tool_json("a", "string", Some("x"));
        t["function"]["parameters"]["required"] = json!(["x", "y"]);
        let err = ToolCatalog::parse(&json!([t]).to_string(), LoadMode::Strict, "x").unwrap_err();
        assert!(err.to_string().contains("`y`"));
    }

    #[test]
    fn zero_returns_serializes_empty_results_object() {
        let t = tool_json("solo", "integer", Some("n"));
        let c = ToolCatalog::parse(&json!([t]).to_string(), LoadMode::Strict, "x").unwrap();
        let v: Value = serde_json::from_str(&c.to_canonical_json()).unwrap();
        assert_eq!(v[0]["function"]["results"], json!({"properties": {}, "type": "object"}));
    }

    #[test]
    fn nested_schema_kept_opaque() {
        let rec = json!([{"type": "function", "function": {
            "name": "n", "description": "d",
            "parameters": {"type": "object", "properties": {
                "filter": {"type": "object", "description": "f", "properties": {"k": {"type": "string"}}},
                "ids": {"type": "array", "description": "i", "items": {"type": "integer"}}
            }, "required": []},
            "results": {"type": "object", "properties": {}}
        }}]);
        let c = ToolCatalog::parse(&rec.to_string(), LoadMode::Strict, "x").unwrap();
        assert_eq!(c.tools[0].parameter("ids").unwrap().extra["items"], json!({"type": "integer"}));
        let again = ToolCatalog::parse(&c.to_canonical_json(), LoadMode::Strict, "x").unwrap();
        assert_eq!(again.tools, c.tools);
    }

    #[test]
    fn value_type_accepts_without_coercion() {
        assert!(ValueType::Number.accepts(&json!(3)));
        assert!(ValueType::Integer.accepts(&json!(3)));
        assert!(!ValueType::Integer.accepts(&json!(3.5)));
        assert!(!ValueType::Number.accepts(&json!("3")));
        assert!(!ValueType::String.accepts(&json!(null)));
    }

    fn lenient_one_missing() -> ToolCatalog {
        let mut tools = serde_json::from_str::<Value>(GETCURRENCY).unwrap();
        tools[0]["function"]["parameters"]["properties"]["targetcurrency"]
            .as_object_mut()
            .unwrap()
            .remove("description");
        ToolCatalog::parse(&tools.to_string(), LoadMode::Lenient, "x").unwrap()
    }

    #[tokio::test]
    async fn enrich_fills_only_flagged_field() {
        let catalog = lenient_one_missing();
        let backend = ScriptedBackend::from_rules(
            "mock",
            vec![ScriptRule::new(
                "parameters.targetcurrency",
                vec![ScriptedReply::Text(r#"{"description": "Currency to convert into"}"#.into())],
            )],
        )
        .unwrap();
        let out = enrich_catalog(&catalog, &backend, &EnrichOptions::default()).await.unwrap();
        assert!(out.flagged.is_empty());
        assert_eq!(
            out.tools[0].parameter("targetcurrency").unwrap().description,
            "Currency to convert into"
        );
        // Everything except the one description is unchanged.
        let mut expected = catalog.tools.clone();
        expected[0].parameters[1].description = "Currency to convert into".into();
        assert_eq!(out.tools, expected);
        // And the output passes a strict load.
        ToolCatalog::parse(&out.to_canonical_json(), LoadMode::Strict, "x").unwrap();
    }

    #[tokio::test]
    async fn enrich_without_flags_is_noop() {
        let catalog = ToolCatalog::parse(GETCURRENCY, LoadMode::Lenient, "x").unwrap();
        let backend = ScriptedBackend::from_rules("mock", vec![]).unwrap();
        let out = enrich_catalog(&catalog, &backend, &EnrichOptions::default()).await.unwrap();
        assert_eq!(out, catalog);
        assert_eq!(backend.calls(), 0);
    }

    #[tokio::test]
    async fn enrich_failure_names_tool_and_field() {
        let catalog = lenient_one_missing();
        let backend = ScriptedBackend::from_rules(
            "mock",
            vec![ScriptRule::new(".", vec![ScriptedReply::Text("sure! here you go".into())])],
        )
        .unwrap();
        let opts = EnrichOptions {
            retries: 1,
            ..EnrichOptions::default()
        };
        let err = enrich_catalog(&catalog, &backend, &opts).await.unwrap_err();
        assert_eq!(backend.calls(), 2);
        let msg = err.to_string();
        assert!(msg.contains("getcurrency") && msg.contains("parameters.targetcurrency"), "{msg}");
    }
}
