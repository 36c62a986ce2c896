//! Dialogue plans: an ordered list of user intents over the sampled tools,
//! generated by a backend and checked before synthesis.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::catalog::ToolSpec;
use crate::llm::{self, ChatBackend, ChatMessage, ChatRequest, GenerationParams, LlmError};
use crate::prompts;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("tool subset is empty")]
    EmptySubset,
    #[error("no valid plan after {attempts} attempts; last problem: {last}")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("backend failure: {0}")]
    Backend(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    ToolCall,
    Chitchat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanItem {
    pub index: usize,
    pub intent: String,
    pub kind: ItemKind,
    #[serde(rename = "tools", default)]
    pub target_tools: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialoguePlan {
    pub items: Vec<PlanItem>,
    pub subset: Vec<String>,
    /// The backend's reply that produced `items`, verbatim.
    pub raw: String,
    pub model: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub attempts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanRule {
    EmptyIntent,
    KindTools,
    UnknownTool,
    IndexOrder,
    NoToolCall,
    Coverage,
    Length,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub item: Option<usize>,
    pub rule: PlanRule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.item {
            Some(i) => write!(f, "item {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub min_items: usize,
    pub max_items: usize,
    /// Re-prompts after an unparsable or invalid plan.
    pub retries: usize,
    pub params: GenerationParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            min_items: 3,
            max_items: 8,
            retries: 2,
            params: GenerationParams::default(),
        }
    }
}

/// All rule violations of `plan` against the sampled tool names.
pub fn validate_plan(items: &[PlanItem], subset: &[String], bounds: Option<(usize, usize)>) -> Vec<Violation> {
    let mut out = Vec::new();
    let known: BTreeSet<&str> = subset.iter().map(String::as_str).collect();
    for (pos, item) in items.iter().enumerate() {
        let mut v = |rule, message: String| {
            out.push(Violation {
                item: Some(pos),
                rule,
                message,
            })
        };
        if item.index != pos {
            v(PlanRule::IndexOrder, format!("index {} out of sequence", item.index));
        }
        if item.intent.trim().is_empty() {
            v(PlanRule::EmptyIntent, "intent is empty".into());
        }
        match (item.kind, item.target_tools.is_empty()) {
            (ItemKind::ToolCall, true) => v(PlanRule::KindTools, "tool_call item names no tools".into()),
            (ItemKind::Chitchat, false) => v(PlanRule::KindTools, "chitchat item names tools".into()),
            _ => {}
        }
        for t in &item.target_tools {
            if !known.contains(t.as_str()) {
                v(PlanRule::UnknownTool, format!("tool `{t}` is not in the sampled subset"));
            }
        }
    }
    if !items.iter().any(|i| i.kind == ItemKind::ToolCall) {
        out.push(Violation {
            item: None,
            rule: PlanRule::NoToolCall,
            message: "plan has no tool_call item".into(),
        });
    }
    for tool in subset {
        if !items.iter().any(|i| i.target_tools.contains(tool)) {
            out.push(Violation {
                item: None,
                rule: PlanRule::Coverage,
                message: format!("tool `{tool}` is not used by any item"),
            });
        }
    }
    if let Some((lo, hi)) = bounds {
        if items.len() < lo || items.len() > hi {
            out.push(Violation {
                item: None,
                rule: PlanRule::Length,
                message: format!("plan has {} items, expected {lo}..={hi}", items.len()),
            });
        }
    }
    out
}

impl DialoguePlan {
    pub fn validate(&self, bounds: Option<(usize, usize)>) -> Vec<Violation> {
        validate_plan(&self.items, &self.subset, bounds)
    }

    pub fn items_json(&self) -> String {
        let items: Vec<Value> = self
            .items
            .iter()
            .map(|i| serde_json::to_value(i).expect("plan item serializes"))
            .collect();
        serde_json::to_string_pretty(&items).expect("plan serializes")
    }
}

#[derive(Deserialize)]
struct RawItem {
    intent: String,
    kind: ItemKind,
    #[serde(default)]
    tools: Vec<String>,
}

/// Parse the backend's reply: a JSON array of `{intent, kind, tools}`,
/// optionally wrapped in a code fence or surrounded by prose.
pub fn parse_plan_items(raw: &str) -> Result<Vec<PlanItem>, String> {
    let start = raw.find('[').ok_or("reply contains no JSON array")?;
    let end = raw.rfind(']').ok_or("reply contains no JSON array")?;
    if end < start {
        return Err("reply contains no JSON array".into());
    }
    let items: Vec<RawItem> = serde_json::from_str(&raw[start..=end]).map_err(|e| format!("plan is not valid JSON: {e}"))?;
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(index, r)| PlanItem {
            index,
            intent: r.intent.trim().to_string(),
            kind: r.kind,
            target_tools: r.tools,
        })
        .collect())
}

/// Ask `backend` for a plan over `subset`, re-prompting with the problems
/// found until the plan validates or retries run out.
pub async fn generate_plan(
    subset: &[ToolSpec],
    backend: &dyn ChatBackend,
    config: &PlannerConfig,
    seed: u64,
) -> Result<DialoguePlan, PlanError> {
    if subset.is_empty() {
        return Err(PlanError::EmptySubset);
    }
    let names: Vec<String> = subset.iter().map(|t| t.name.clone()).collect();
    let records: Vec<Value> = subset.iter().map(ToolSpec::to_record).collect();
    let tools_json = serde_json::to_string(&records).expect("records serialize");
    let mut messages = vec![
        ChatMessage::system(prompts::render_plan_system(config.min_items, config.max_items)),
        ChatMessage::user(prompts::render_plan_user(&tools_json)),
    ];
    let bounds = Some((config.min_items, config.max_items));
    let mut last = String::new();
    for attempt in 1..=config.retries + 1 {
        let params = config.params.with_seed(seed.wrapping_add(attempt as u64 - 1));
        let request = ChatRequest::new(messages.clone(), params);
        let reply = match llm::complete(backend, &request).await {
            Ok(r) => r,
            Err(e) if e.is_output_error() => {
                last = e.to_string();
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let problems = match parse_plan_items(&reply.content) {
            Ok(items) => {
                let violations = validate_plan(&items, &names, bounds);
                if violations.is_empty() {
                    return Ok(DialoguePlan {
                        items,
                        subset: names,
                        raw: reply.content,
                        model: backend.model_id().to_string(),
                        seed: Some(seed),
                        attempts: attempt,
                    });
                }
                violations.iter().map(|v| format!("- {v}")).collect::<Vec<_>>().join("\n")
            }
            Err(e) => format!("- {e}"),
        };
        tracing::debug!(attempt, %problems, "plan rejected");
        last = problems.clone();
        messages.push(ChatMessage::assistant(reply.content));
        messages.push(ChatMessage::user(prompts::render_plan_retry(&problems)));
    }
    Err(PlanError::RetriesExhausted {
        attempts: config.retries + 1,
        last,
    })
}
