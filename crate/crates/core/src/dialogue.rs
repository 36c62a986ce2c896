//! The dialogue record written to corpus JSONL files, and structural checks
//! shared by the synthesizer, the filter and the metrics.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::catalog::{LoadMode, ToolSpec};
use crate::llm::{ChatMessage, GenerationParams, Role};
use crate::planner::DialoguePlan;

impl Serialize for ToolSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ToolSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let record = Value::deserialize(d)?;
        ToolSpec::from_record(0, &record, LoadMode::Lenient, &mut Vec::new()).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueStatus {
    Complete,
    TurnLimit,
    Failed,
}

/// The User agent's hidden state for one of its messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMarker {
    /// Index into `messages` of the user message this marker belongs to;
    /// `None` for the closing marker.
    pub message: Option<usize>,
    pub item_index: Option<usize>,
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    GraphWalk,
    Uniform,
    Given,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingInfo {
    pub method: SamplingMethod,
    /// Catalog indices in sampling order.
    pub nodes: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentModels {
    pub user: String,
    pub assistant: String,
    pub tool: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentParams {
    pub user: GenerationParams,
    pub assistant: GenerationParams,
    pub tool: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingInfo>,
    pub plan_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner_model: Option<String>,
    pub models: AgentModels,
    pub params: AgentParams,
    pub turn_limit: usize,
    pub assistant_turns: usize,
    pub markers: Vec<ItemMarker>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub pipeline_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub tools: Vec<ToolSpec>,
    pub plan: Option<DialoguePlan>,
    pub messages: Vec<ChatMessage>,
    pub status: DialogueStatus,
    pub provenance: Provenance,
}

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

impl Dialogue {
    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("dialogue serializes")
    }
}

/// Transcript shape `(user (assistant tool*)+)+`, where tool messages only
/// follow a tool-call-bearing assistant message and answer each of its
/// calls exactly once, in call order, before the next assistant message.
pub fn check_role_grammar(messages: &[ChatMessage]) -> Result<(), String> {
    if messages.is_empty() {
        return Err("transcript is empty".into());
    }
    let mut prev: Option<Role> = None;
    let mut pending: Vec<&str> = Vec::new();
    for (idx, m) in messages.iter().enumerate() {
        let ok = match (prev, m.role) {
            (_, Role::System) => false,
            (None, r) => r == Role::User,
            (Some(Role::User), Role::Assistant) => true,
            (Some(Role::Assistant), Role::User) => pending.is_empty(),
            (Some(Role::Assistant), Role::Assistant) => pending.is_empty(),
            (Some(Role::Assistant), Role::Tool) | (Some(Role::Tool), Role::Tool) => !pending.is_empty(),
            (Some(Role::Tool), Role::Assistant) => pending.is_empty(),
            _ => false,
        };
        if !ok {
            let prev_s = prev.map_or("start", |r| r.as_str());
            let detail = if pending.is_empty() { "" } else { " with unanswered tool calls" };
            return Err(format!("message {idx}: {} after {prev_s}{detail}", m.role.as_str()));
        }
        match m.role {
            Role::Assistant => pending = m.tool_calls.iter().map(|c| c.id.as_str()).collect(),
            Role::Tool => {
                let id = m.tool_call_id.as_deref().unwrap_or("");
                if pending.first() != Some(&id) {
                    return Err(format!("message {idx}: tool reply `{id}` does not answer the next pending call"));
                }
                pending.remove(0);
            }
            _ => {}
        }
        if m.role != Role::Assistant && m.has_tool_calls() {
            return Err(format!("message {idx}: tool_calls on a {} message", m.role.as_str()));
        }
        prev = Some(m.role);
    }
    if !pending.is_empty() {
        return Err("transcript ends with unanswered tool calls".into());
    }
    if prev != Some(Role::Assistant) && prev != Some(Role::Tool) {
        return Err("transcript ends without an assistant reply".into());
    }
    Ok(())
}

/// Render a transcript as plain text for prompts.
pub fn render_transcript(messages: &[ChatMessage]) -> String {
    if messages.is_empty() {
        return "(no messages yet)".into();
    }
    let mut out = String::new();
    for m in messages {
        match m.role {
            Role::User => out.push_str(&format!("USER: {}\n", m.content)),
            Role::Assistant if m.has_tool_calls() => {
                if !m.content.is_empty() {
                    out.push_str(&format!("ASSISTANT: {}\n", m.content));
                }
                for c in &m.tool_calls {
                    out.push_str(&format!("ASSISTANT calls {}({})\n", c.name, c.arguments));
                }
            }
            Role::Assistant => out.push_str(&format!("ASSISTANT: {}\n", m.content)),
            Role::Tool => out.push_str(&format!("TOOL RESULT: {}\n", m.content)),
            Role::System => out.push_str(&format!("SYSTEM: {}\n", m.content)),
        }
    }
    out.pop();
    out
}
