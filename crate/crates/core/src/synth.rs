//! The three-agent synthesis loop. Each turn the User agent (driven by the
//! plan) speaks, the Assistant agent answers, asks for missing parameters or
//! calls tools, and the Tool agent simulates every call's result.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::ToolSpec;
use crate::dialogue::{
    render_transcript, AgentModels, AgentParams, Dialogue, DialogueStatus, ItemMarker, Provenance, PIPELINE_VERSION,
};
use crate::llm::{self, ChatBackend, ChatMessage, ChatRequest, GenerationParams, LlmError, ToolCall};
use crate::planner::DialoguePlan;
use crate::prompts;
use crate::seeds;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("tool call names `{call}` but the simulated tool is `{spec}`")]
    ToolMismatch { call: String, spec: String },
    #[error("{agent} agent output rejected after {attempts} attempts: {last}")]
    Output {
        agent: &'static str,
        attempts: usize,
        last: String,
    },
    #[error("backend failure: {0}")]
    Backend(#[from] LlmError),
    #[error("assistant made more than {0} consecutive tool-call rounds")]
    ToolRounds(usize),
}

/// Prompt templates; `{plan}`, `{position}`, `{tools}` and `{tool}` are
/// substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentTemplates {
    pub user_plan: String,
    pub user_improvise: String,
    pub assistant: String,
    pub tool: String,
}

impl Default for AgentTemplates {
    fn default() -> Self {
        AgentTemplates {
            user_plan: prompts::USER_PLAN_SYSTEM.into(),
            user_improvise: prompts::USER_IMPROVISE_SYSTEM.into(),
            assistant: prompts::ASSISTANT_SYSTEM.into(),
            tool: prompts::TOOL_SYSTEM.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Maximum number of user turns answered by the assistant.
    pub turn_limit: usize,
    /// Re-prompts per agent step after malformed output.
    pub retries: usize,
    /// Maximum consecutive tool-call rounds inside one assistant turn.
    pub max_tool_rounds: usize,
    /// Reject (and retry) assistant tool calls that name a tool outside the
    /// subset, carry non-object arguments, or use undeclared argument keys.
    /// Turning this off lets such calls through to the filter.
    pub enforce_tool_schema: bool,
    pub params: AgentParams,
    pub templates: AgentTemplates,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            turn_limit: 16,
            retries: 2,
            max_tool_rounds: 4,
            enforce_tool_schema: true,
            params: AgentParams::default(),
            templates: AgentTemplates::default(),
        }
    }
}

/// The three backends used for one dialogue.
#[derive(Clone)]
pub struct Agents {
    pub user: Arc<dyn ChatBackend>,
    pub assistant: Arc<dyn ChatBackend>,
    pub tool: Arc<dyn ChatBackend>,
}

impl Agents {
    pub fn uniform(backend: Arc<dyn ChatBackend>) -> Self {
        Agents {
            user: Arc::clone(&backend),
            assistant: Arc::clone(&backend),
            tool: backend,
        }
    }

    fn models(&self) -> AgentModels {
        AgentModels {
            user: self.user.model_id().into(),
            assistant: self.assistant.model_id().into(),
            tool: self.tool.model_id().into(),
        }
    }
}

fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

/// Check a simulated result against the tool's declared return values.
pub fn validate_tool_result(content: &str, spec: &ToolSpec) -> Result<Map<String, Value>, String> {
    let value: Value = serde_json::from_str(strip_fence(content)).map_err(|e| format!("result is not JSON: {e}"))?;
    let Value::Object(map) = value else {
        return Err("result is not a JSON object".into());
    };
    for (k, v) in &map {
        let ret = spec
            .return_value(k)
            .ok_or_else(|| format!("key `{k}` is not a declared result of `{}`", spec.name))?;
        if !ret.value_type.accepts(v) {
            return Err(format!("result `{k}` should be {}, got {v}", ret.value_type));
        }
    }
    Ok(map)
}

/// Ask the Tool agent for the result of `call`. A tool with no declared
/// results answers `{}` without a backend call.
pub async fn simulate_tool(
    call: &ToolCall,
    spec: &ToolSpec,
    backend: &dyn ChatBackend,
    params: &GenerationParams,
    retries: usize,
    template: &str,
) -> Result<ChatMessage, SynthesisError> {
    if call.name != spec.name {
        return Err(SynthesisError::ToolMismatch {
            call: call.name.clone(),
            spec: spec.name.clone(),
        });
    }
    if spec.returns.is_empty() {
        return Ok(ChatMessage::tool(&call.id, "{}").with_model(backend.model_id()));
    }
    let messages = vec![
        ChatMessage::system(template.replace("{tool}", &spec.canonical_json())),
        ChatMessage::user(prompts::render_tool_call(&call.name, &call.arguments)),
    ];
    let mut last = String::new();
    for attempt in 0..=retries {
        let p = params.with_seed(params.seed.unwrap_or(0).wrapping_add(attempt as u64));
        let reply = match llm::complete(backend, &ChatRequest::new(messages.clone(), p)).await {
            Ok(r) => r,
            Err(e) if e.is_output_error() => {
                last = e.to_string();
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        match validate_tool_result(&reply.content, spec) {
            Ok(map) => {
                let content = serde_json::to_string(&Value::Object(map)).expect("map serializes");
                return Ok(ChatMessage::tool(&call.id, content).with_model(backend.model_id()));
            }
            Err(e) => last = e,
        }
    }
    Err(SynthesisError::Output {
        agent: "tool",
        attempts: retries + 1,
        last,
    })
}

#[derive(Debug, Deserialize)]
struct RawMarker {
    item_index: Option<usize>,
    finished: bool,
}

/// Split a User agent reply into its marker line and visible utterance.
pub fn parse_user_reply(content: &str) -> Result<(Option<usize>, bool, String), String> {
    let trimmed = content.trim_start();
    let (first, rest) = trimmed.split_once('\n').unwrap_or((trimmed, ""));
    let marker: RawMarker =
        serde_json::from_str(first.trim()).map_err(|e| format!("first line is not a state marker: {e}"))?;
    Ok((marker.item_index, marker.finished, rest.trim().to_string()))
}

/// Check a marker transition. `current` is the item being worked on and
/// `n_items` the plan length when there is a plan.
fn check_transition(
    current: Option<usize>,
    item_index: Option<usize>,
    finished: bool,
    n_items: Option<usize>,
) -> Result<(), String> {
    let expected_next = current.map_or(0, |c| c + 1);
    match (current, item_index) {
        (None, Some(0)) => Ok(()),
        (None, other) => Err(format!("first message must address item 0, got {other:?}")),
        (Some(c), Some(i)) if !finished && i == c => Ok(()),
        (Some(_), Some(i)) if finished && i == expected_next => match n_items {
            Some(n) if i >= n => Err(format!("item {i} does not exist; the plan has {n} items")),
            _ => Ok(()),
        },
        (Some(c), None) if finished => match n_items {
            Some(n) if c + 1 < n => Err(format!("ended after item {c} but the plan has {n} items")),
            _ => Ok(()),
        },
        (Some(c), other) => Err(format!(
            "invalid transition from item {c} (finished={finished}) to {other:?}"
        )),
    }
}

struct Loop<'a> {
    id: &'a str,
    plan: Option<&'a DialoguePlan>,
    tools: &'a [ToolSpec],
    agents: &'a Agents,
    config: &'a AgentConfig,
    seed: u64,
    tool_schemas: Vec<Value>,
    tools_json: String,
    messages: Vec<ChatMessage>,
    markers: Vec<ItemMarker>,
    used_call_ids: HashSet<String>,
    calls: u64,
}

enum UserStep {
    Speak { item: usize, finished: bool, text: String },
    Done,
}

impl<'a> Loop<'a> {
    fn params(&self, base: &GenerationParams, agent: u64, turn: usize, attempt: usize) -> GenerationParams {
        let mut p = base.clone();
        p.seed = Some(seeds::derive(self.seed, &[agent, turn as u64, attempt as u64]));
        p.user = Some(self.id.to_string());
        p
    }

    async fn user_step(&self, current: Option<usize>, turn: usize) -> Result<UserStep, SynthesisError> {
        let system = match self.plan {
            Some(plan) => self
                .config
                .templates
                .user_plan
                .replace("{plan}", &plan.items_json())
                .replace("{position}", &prompts::position_line(current)),
            None => self
                .config
                .templates
                .user_improvise
                .replace("{tools}", &self.tools_json)
                .replace("{position}", &prompts::position_line(current)),
        };
        let messages = vec![
            ChatMessage::system(system),
            ChatMessage::user(format!("Conversation so far:\n{}", render_transcript(&self.messages))),
        ];
        let n_items = self.plan.map(|p| p.items.len());
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            let params = self.params(&self.config.params.user, 1, turn, attempt);
            let reply = match llm::complete(self.agents.user.as_ref(), &ChatRequest::new(messages.clone(), params)).await {
                Ok(r) => r,
                Err(e) if e.is_output_error() => {
                    last = e.to_string();
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let parsed = parse_user_reply(&reply.content).and_then(|(item, finished, text)| {
                check_transition(current, item, finished, n_items)?;
                match item {
                    None => Ok(UserStep::Done),
                    Some(_) if text.is_empty() => Err("empty user message".into()),
                    Some(i) => Ok(UserStep::Speak { item: i, finished, text }),
                }
            });
            match parsed {
                Ok(step) => return Ok(step),
                Err(e) => last = e,
            }
        }
        Err(SynthesisError::Output {
            agent: "user",
            attempts: self.config.retries + 1,
            last,
        })
    }

    fn check_arguments(&self, call: &ToolCall) -> Result<(), String> {
        let args = call.parsed_arguments()?;
        let spec = self
            .tools
            .iter()
            .find(|t| t.name == call.name)
            .ok_or_else(|| format!("unknown tool `{}`", call.name))?;
        for key in args.keys() {
            if spec.parameter(key).is_none() {
                return Err(format!("`{}` has no parameter `{key}`", call.name));
            }
        }
        Ok(())
    }

    async fn assistant_step(&mut self, turn: usize, round: usize) -> Result<ChatMessage, SynthesisError> {
        let mut messages = vec![ChatMessage::system(self.config.templates.assistant.clone())];
        messages.extend(self.messages.iter().cloned());
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            let params = self.params(&self.config.params.assistant, 2, turn * 64 + round, attempt);
            let request = ChatRequest::new(messages.clone(), params).with_tools(self.tool_schemas.clone());
            let reply = match llm::complete_with(
                self.agents.assistant.as_ref(),
                &request,
                self.config.enforce_tool_schema,
            )
            .await
            {
                Ok(r) => r,
                Err(e) if e.is_output_error() => {
                    tracing::debug!(dialogue = self.id, error = %e, "assistant output rejected");
                    last = e.to_string();
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if !reply.has_tool_calls() && reply.content.trim().is_empty() {
                last = "empty assistant reply".into();
                continue;
            }
            if self.config.enforce_tool_schema {
                if let Some(err) = reply.tool_calls.iter().find_map(|c| self.check_arguments(c).err()) {
                    tracing::debug!(dialogue = self.id, error = %err, "assistant tool call rejected");
                    last = err;
                    continue;
                }
            }
            return Ok(self.assign_call_ids(reply));
        }
        Err(SynthesisError::Output {
            agent: "assistant",
            attempts: self.config.retries + 1,
            last,
        })
    }

    fn assign_call_ids(&mut self, mut reply: ChatMessage) -> ChatMessage {
        for call in &mut reply.tool_calls {
            if call.id.is_empty() || self.used_call_ids.contains(&call.id) {
                loop {
                    self.calls += 1;
                    let candidate = format!("call_{}", self.calls);
                    if !self.used_call_ids.contains(&candidate) {
                        call.id = candidate;
                        break;
                    }
                }
            }
            self.used_call_ids.insert(call.id.clone());
        }
        reply
    }

    async fn assistant_turn(&mut self, turn: usize) -> Result<(), SynthesisError> {
        for round in 0..=self.config.max_tool_rounds {
            let reply = self.assistant_step(turn, round).await?;
            let calls = reply.tool_calls.clone();
            self.messages.push(reply);
            if calls.is_empty() {
                return Ok(());
            }
            for (k, call) in calls.iter().enumerate() {
                let Some(spec) = self.tools.iter().find(|t| t.name == call.name) else {
                    // Only reachable with schema enforcement off.
                    self.messages.push(
                        ChatMessage::tool(&call.id, r#"{"error":"unknown tool"}"#).with_model(self.agents.tool.model_id()),
                    );
                    continue;
                };
                let params = self.params(&self.config.params.tool, 3, turn * 64 + round, k);
                let msg = simulate_tool(
                    call,
                    spec,
                    self.agents.tool.as_ref(),
                    &params,
                    self.config.retries,
                    &self.config.templates.tool,
                )
                .await?;
                self.messages.push(msg);
            }
        }
        Err(SynthesisError::ToolRounds(self.config.max_tool_rounds))
    }

    async fn run(&mut self) -> Result<(DialogueStatus, usize), (SynthesisError, usize)> {
        let mut current: Option<usize> = None;
        let mut turns = 0;
        loop {
            match self.user_step(current, turns).await.map_err(|e| (e, turns))? {
                UserStep::Done => {
                    self.markers.push(ItemMarker {
                        message: None,
                        item_index: None,
                        finished: true,
                    });
                    return Ok((DialogueStatus::Complete, turns));
                }
                UserStep::Speak { item, finished, text } => {
                    if turns >= self.config.turn_limit {
                        return Ok((DialogueStatus::TurnLimit, turns));
                    }
                    self.markers.push(ItemMarker {
                        message: Some(self.messages.len()),
                        item_index: Some(item),
                        finished,
                    });
                    self.messages
                        .push(ChatMessage::user(text).with_model(self.agents.user.model_id()));
                    current = Some(item);
                    self.assistant_turn(turns).await.map_err(|e| (e, turns + 1))?;
                    turns += 1;
                }
            }
        }
    }
}

/// Synthesize one dialogue. Without a plan the User agent improvises
/// requests over `tools`. Failures are reported through the returned
/// dialogue's status and `provenance.failure`; the partial transcript is
/// kept.
pub async fn synthesize(
    id: &str,
    plan: Option<&DialoguePlan>,
    tools: &[ToolSpec],
    agents: &Agents,
    config: &AgentConfig,
    seed: u64,
) -> Dialogue {
    synthesize_detailed(id, plan, tools, agents, config, seed).await.0
}

/// [`synthesize`], also returning the error behind a `failed` status.
pub async fn synthesize_detailed(
    id: &str,
    plan: Option<&DialoguePlan>,
    tools: &[ToolSpec],
    agents: &Agents,
    config: &AgentConfig,
    seed: u64,
) -> (Dialogue, Option<SynthesisError>) {
    let records: Vec<Value> = tools.iter().map(ToolSpec::to_record).collect();
    let mut state = Loop {
        id,
        plan,
        tools,
        agents,
        config,
        seed,
        tool_schemas: tools.iter().map(ToolSpec::to_function_schema).collect(),
        tools_json: serde_json::to_string(&records).expect("records serialize"),
        messages: Vec::new(),
        markers: Vec::new(),
        used_call_ids: HashSet::new(),
        calls: 0,
    };
    let (status, turns, error) = match state.run().await {
        Ok((status, turns)) => (status, turns, None),
        Err((e, turns)) => {
            tracing::warn!(dialogue = id, error = %e, "synthesis failed");
            (DialogueStatus::Failed, turns, Some(e))
        }
    };
    let failure = error.as_ref().map(ToString::to_string);
    let dialogue = Dialogue {
        id: id.to_string(),
        tools: tools.to_vec(),
        plan: plan.cloned(),
        messages: state.messages,
        status,
        provenance: Provenance {
            seed,
            sampling: None,
            plan_enabled: plan.is_some(),
            planner_model: plan.map(|p| p.model.clone()),
            models: agents.models(),
            params: config.params.clone(),
            turn_limit: config.turn_limit,
            assistant_turns: turns,
            markers: state.markers,
            failure,
            pipeline_version: PIPELINE_VERSION.to_string(),
            started_at: None,
            finished_at: None,
        },
    };
    (dialogue, error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn user_reply_parsing() {
        let (i, f, t) = parse_user_reply("{\"item_index\": 1, \"finished\": true}\nBook it please.").unwrap();
        assert_eq!((i, f, t.as_str()), (Some(1), true, "Book it please."));
        let (i, _, t) = parse_user_reply("{\"item_index\": null, \"finished\": true}").unwrap();
        assert_eq!((i, t.as_str()), (None, ""));
        assert!(parse_user_reply("Hello there").is_err());
    }

    #[test]
    fn transitions() {
        assert!(check_transition(None, Some(0), true, Some(3)).is_ok());
        assert!(check_transition(None, Some(1), true, Some(3)).is_err());
        assert!(check_transition(Some(0), Some(0), false, Some(3)).is_ok());
        assert!(check_transition(Some(0), Some(1), true, Some(3)).is_ok());
        assert!(check_transition(Some(0), Some(2), true, Some(3)).is_err());
        assert!(check_transition(Some(0), Some(1), false, Some(3)).is_err());
        assert!(check_transition(Some(2), Some(3), true, Some(3)).is_err());
        assert!(check_transition(Some(2), None, true, Some(3)).is_ok());
        assert!(check_transition(Some(1), None, true, Some(3)).is_err());
        assert!(check_transition(Some(1), None, false, Some(3)).is_err());
        // Improvised dialogues have no item bound.
        assert!(check_transition(Some(7), Some(8), true, None).is_ok());
        assert!(check_transition(Some(1), None, true, None).is_ok());
    }
}
