//! A deterministic, offline stand-in for a chat model. It recognizes each
//! built-in prompt by its first line and answers the way a cooperative model
//! would: the planner covers every tool, the User agent follows its plan (or
//! improvises over the tool list), the Assistant asks for missing required
//! parameters before calling tools, the Tool agent fabricates typed results,
//! and the judge emits a score line.
//!
//! Faults can be planted per dialogue index (parsed from the trailing digits
//! of the request's `user` field) to exercise the filter.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::embedding::fnv1a;
use crate::llm::{ChatBackend, ChatMessage, ChatRequest, LlmError, Role, ToolCall};
use crate::prompts;

pub const SIMULATED_MODEL: &str = "mock-simulated";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// The assistant calls a tool that is not in the subset.
    UnknownTool,
    /// The assistant passes a parameter value of the wrong type.
    WrongArgumentType,
    /// The assistant never calls a tool.
    NoToolCalls,
    /// The user never moves past the first request.
    NeverFinish,
}

/// Applies to dialogues whose index `i` satisfies `i % every == offset`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFault {
    pub kind: FaultKind,
    pub every: usize,
    #[serde(default)]
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedConfig {
    pub model: String,
    pub faults: Vec<PlantedFault>,
}

impl Default for SimulatedConfig {
    fn default() -> Self {
        SimulatedConfig {
            model: SIMULATED_MODEL.into(),
            faults: Vec::new(),
        }
    }
}

pub struct SimulatedBackend {
    config: SimulatedConfig,
    calls: AtomicUsize,
}

impl SimulatedBackend {
    pub fn new(config: SimulatedConfig) -> Self {
        SimulatedBackend {
            config,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fault(&self, request: &ChatRequest, kind: FaultKind) -> bool {
        let Some(index) = request.params.user.as_deref().and_then(dialogue_index) else {
            return false;
        };
        self.config
            .faults
            .iter()
            .any(|f| f.kind == kind && f.every > 0 && index % f.every == f.offset % f.every)
    }
}

impl Default for SimulatedBackend {
    fn default() -> Self {
        Self::new(SimulatedConfig::default())
    }
}

/// Trailing decimal digits of a dialogue id.
pub fn dialogue_index(id: &str) -> Option<usize> {
    let digits: String = id.chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

#[async_trait]
impl ChatBackend for SimulatedBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    async fn send(&self, request: &ChatRequest) -> Result<ChatMessage, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let system = request
            .messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let last_user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let mut rng = ChaCha8Rng::seed_from_u64(
            request.params.seed.unwrap_or(0) ^ fnv1a(request.prompt_text().as_bytes()),
        );
        let reply = if system.starts_with(prompts::PLAN_HEADER) {
            ChatMessage::assistant(plan_reply(system, last_user, &mut rng)?)
        } else if system.starts_with(prompts::USER_HEADER) {
            ChatMessage::assistant(user_reply(
                system,
                last_user,
                request.params.user.as_deref().unwrap_or(""),
                self.fault(request, FaultKind::NeverFinish),
                &mut rng,
            )?)
        } else if system.starts_with(prompts::ASSISTANT_HEADER) {
            self.assistant_reply(request, &mut rng)
        } else if system.starts_with(prompts::TOOL_HEADER) {
            ChatMessage::assistant(tool_reply(system, last_user, &mut rng)?)
        } else if system.starts_with(prompts::RUBRIC_HEADER) {
            ChatMessage::assistant(rubric_reply(last_user))
        } else if system.starts_with(prompts::ENRICH_HEADER) {
            ChatMessage::assistant(enrich_reply(last_user))
        } else {
            return Err(LlmError::Script("simulated backend: unrecognized prompt".into()));
        };
        Ok(reply)
    }
}

fn script_err(msg: impl Into<String>) -> LlmError {
    LlmError::Script(format!("simulated backend: {}", msg.into()))
}

fn fenced_value(text: &str) -> Result<Value, LlmError> {
    let body = prompts::fenced_json(text).ok_or_else(|| script_err("prompt has no JSON block"))?;
    serde_json::from_str(body).map_err(|e| script_err(format!("prompt JSON block: {e}")))
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options[rng.random_range(0..options.len())]
}

/// Tool facts the mock needs, read from a record or function schema.
struct ToolView {
    name: String,
    description: String,
    params: Vec<(String, String, bool)>,
    results: Vec<(String, String)>,
}

impl ToolView {
    fn from_value(v: &Value) -> Option<Self> {
        let f = v.get("function")?;
        let name = f.get("name")?.as_str()?.to_string();
        let description = f.get("description").and_then(Value::as_str).unwrap_or("").to_string();
        let required: Vec<&str> = f
            .pointer("/parameters/required")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let props = |ptr: &str| -> Vec<(String, String)> {
            f.pointer(ptr)
                .and_then(Value::as_object)
                .map(|o| {
                    o.iter()
                        .map(|(k, s)| {
                            let t = s.get("type").and_then(Value::as_str).unwrap_or("string");
                            (k.clone(), t.to_string())
                        })
                        .collect()
                })
                .unwrap_or_default()
        };
        let params = props("/parameters/properties")
            .into_iter()
            .map(|(k, t)| {
                let req = required.contains(&k.as_str());
                (k, t, req)
            })
            .collect();
        Some(ToolView {
            name,
            description,
            params,
            results: props("/results/properties"),
        })
    }

    /// What the user asks for, as a verb phrase.
    fn phrase(&self) -> String {
        let d = self.description.trim().trim_end_matches('.').trim();
        if d.split_whitespace().count() < 2 {
            return format!("use {}", self.name);
        }
        let mut chars = d.chars();
        let first = chars.next().map(|c| c.to_lowercase().collect::<String>()).unwrap_or_default();
        format!("{first}{}", chars.as_str())
    }

    fn mentioned_in(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        lower.contains(&self.phrase().to_lowercase()) || lower.contains(&self.name.to_lowercase())
    }

    fn required(&self) -> impl Iterator<Item = &(String, String, bool)> {
        self.params.iter().filter(|p| p.2)
    }
}

fn tool_views(values: &[Value]) -> Vec<ToolView> {
    values.iter().filter_map(ToolView::from_value).collect()
}

const WORDS: &[&str] = &[
    "paris", "tokyo", "berlin", "lagos", "lima", "oslo", "austin", "seoul", "cairo", "quito", "alpha", "delta",
    "orion", "maple", "cedar", "harbor", "summit", "violet", "amber", "coral",
];

fn sample_value(ty: &str, rng: &mut ChaCha8Rng) -> Value {
    match ty {
        "integer" => json!(rng.random_range(1..500)),
        "number" => json!(f64::from(rng.random_range(1..2000u32)) / 4.0),
        "boolean" => json!(rng.random_bool(0.5)),
        "array" => json!([pick(rng, WORDS), pick(rng, WORDS)]),
        "object" => json!({ "note": pick(rng, WORDS) }),
        _ => json!(format!("{} {}", pick(rng, WORDS), rng.random_range(1..100))),
    }
}

fn wrong_value(ty: &str) -> Value {
    match ty {
        "string" => json!(404),
        _ => json!("not-a-value"),
    }
}

fn assignments(pairs: &[(String, Value)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k} = {}", serde_json::to_string(v).expect("value serializes")))
        .collect::<Vec<_>>()
        .join(", ")
}

fn assignment_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"([A-Za-z_][A-Za-z0-9_.\-]*) = ("(?:[^"\\]|\\.)*"|-?\d+(?:\.\d+)?|true|false|\[[^\]]*\]|\{[^}]*\})"#,
        )
        .expect("static regex")
    })
}

/// `name = <json>` assignments found in `text`, later ones winning.
fn parse_assignments(text: &str, into: &mut BTreeMap<String, Value>) {
    for c in assignment_re().captures_iter(text) {
        if let Ok(v) = serde_json::from_str(&c[2]) {
            into.insert(c[1].to_string(), v);
        }
    }
}

const ASK_MARKER: &str = "Could you give me:";

fn plan_reply(system: &str, user: &str, rng: &mut ChaCha8Rng) -> Result<String, LlmError> {
    static BOUNDS: OnceLock<Regex> = OnceLock::new();
    let bounds = BOUNDS.get_or_init(|| Regex::new(r"between (\d+) and (\d+) requests").expect("static regex"));
    let (lo, hi): (usize, usize) = bounds
        .captures(system)
        .map(|c| (c[1].parse().unwrap_or(1), c[2].parse().unwrap_or(8)))
        .unwrap_or((1, 8));
    let Value::Array(records) = fenced_value(user)? else {
        return Err(script_err("tool block is not an array"));
    };
    let tools = tool_views(&records);
    if tools.is_empty() {
        return Err(script_err("no tools to plan over"));
    }
    let hi = hi.max(1);
    let tool_items = tools.len().min(if hi > 1 { hi - 1 } else { 1 });
    let mut groups: Vec<Vec<&ToolView>> = vec![Vec::new(); tool_items];
    for (i, t) in tools.iter().enumerate() {
        groups[i * tool_items / tools.len()].push(t);
    }
    let mut items: Vec<Value> = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        let mut asks = Vec::new();
        for (k, t) in group.iter().enumerate() {
            let mut values: Vec<(String, Value)> =
                t.required().map(|(n, ty, _)| (n.clone(), sample_value(ty, rng))).collect();
            // Every other request leaves one detail for the assistant to ask about.
            if (g + k) % 2 == 1 {
                values.pop();
            }
            let mut ask = t.phrase();
            if !values.is_empty() {
                ask.push_str(&format!(" with {}", assignments(&values)));
            }
            asks.push(ask);
        }
        items.push(json!({
            "intent": format!("Ask the assistant to {}.", asks.join(" and also ")),
            "kind": "tool_call",
            "tools": group.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
        }));
    }
    let want_chat = (lo.saturating_sub(items.len())).max(usize::from(items.len() < hi));
    for c in 0..want_chat {
        let topic = pick(rng, &["the weather", "weekend plans", "a favourite book", "travel", "music", "food"]);
        let item = json!({"intent": format!("Chat briefly about {topic}."), "kind": "chitchat", "tools": []});
        if c == 0 && items.len() > 1 {
            items.insert(1, item);
        } else {
            items.push(item);
        }
    }
    Ok(serde_json::to_string_pretty(&items).expect("plan serializes"))
}

fn position(system: &str) -> Option<usize> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"Current request: #(\d+)").expect("static regex"));
    re.captures(system).and_then(|c| c[1].parse().ok())
}

fn last_assistant_line(transcript: &str) -> &str {
    transcript
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("ASSISTANT: "))
        .unwrap_or("")
}

fn marker(item: Option<usize>, finished: bool) -> String {
    json!({"item_index": item, "finished": finished}).to_string()
}

/// `name (type)` pairs from an assistant question.
fn asked_params(text: &str) -> Vec<(String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_.\-]*) \(([a-z]+)\)").expect("static regex"));
    let Some(start) = text.find(ASK_MARKER) else {
        return Vec::new();
    };
    re.captures_iter(&text[start..])
        .map(|c| (c[1].to_string(), c[2].to_string()))
        .collect()
}

fn echo(reply: &str) -> String {
    let words: Vec<&str> = reply.split_whitespace().take(14).collect();
    words.join(" ").trim_end_matches(['.', ',', ';', ':']).to_string()
}

fn intent_utterance(intent: &str, rng: &mut ChaCha8Rng) -> String {
    if let Some(rest) = intent.strip_prefix("Ask the assistant to ") {
        let rest = rest.trim_end_matches('.');
        let opener = pick(rng, &["Could you", "Can you please", "I'd like you to", "Would you"]);
        return format!("{opener} {rest}?");
    }
    if let Some(rest) = intent.strip_prefix("Chat briefly about ") {
        let rest = rest.trim_end_matches('.');
        let opener = pick(rng, &["By the way, what do you think about", "Random thought: any views on", "Off topic, but do you like"]);
        return format!("{opener} {rest}?");
    }
    intent.to_string()
}

fn user_reply(
    system: &str,
    user: &str,
    dialogue_id: &str,
    never_finish: bool,
    rng: &mut ChaCha8Rng,
) -> Result<String, LlmError> {
    let transcript = user.strip_prefix("Conversation so far:\n").unwrap_or(user);
    let current = position(system);
    let last = last_assistant_line(transcript);
    let planned = system.contains("Your requests for this conversation");
    let block = fenced_value(system)?;
    let Value::Array(entries) = block else {
        return Err(script_err("user prompt block is not an array"));
    };

    // Item texts: plan intents, or improvised requests over a rotated tool list.
    let requests: Vec<String> = if planned {
        entries
            .iter()
            .map(|e| e.get("intent").and_then(Value::as_str).unwrap_or("").to_string())
            .collect()
    } else {
        let tools = tool_views(&entries);
        let shift = if tools.is_empty() { 0 } else { fnv1a(dialogue_id.as_bytes()) as usize % tools.len() };
        let mut order: Vec<&ToolView> = tools.iter().collect();
        order.rotate_left(shift);
        order
            .iter()
            .map(|t| {
                let mut item_rng = ChaCha8Rng::seed_from_u64(fnv1a(format!("{dialogue_id}/{}", t.name).as_bytes()));
                let values: Vec<(String, Value)> =
                    t.required().map(|(n, ty, _)| (n.clone(), sample_value(ty, &mut item_rng))).collect();
                let mut ask = format!("Ask the assistant to {}", t.phrase());
                if !values.is_empty() {
                    ask.push_str(&format!(" with {}", assignments(&values)));
                }
                ask
            })
            .collect()
    };
    if requests.is_empty() {
        return Err(script_err("nothing to request"));
    }

    let Some(c) = current else {
        let greet = pick(rng, &["Hi!", "Hello there.", "Hey.", "Good morning!", "Hi, quick one."]);
        return Ok(format!("{}\n{greet} {}", marker(Some(0), false), intent_utterance(&requests[0], rng)));
    };
    let asked = asked_params(last);
    if !asked.is_empty() {
        let values: Vec<(String, Value)> = asked.iter().map(|(n, ty)| (n.clone(), sample_value(ty, rng))).collect();
        let lead = pick(rng, &["Sure:", "Of course,", "Right, here you go:", "Yes:"]);
        return Ok(format!("{}\n{lead} {}.", marker(Some(c), false), assignments(&values)));
    }
    if never_finish {
        let nag = pick(rng, &["Hmm, could you explain that once more?", "Wait, say that again more slowly?", "I'm not sure I follow, again please?"]);
        return Ok(format!("{}\n{nag}", marker(Some(c), false)));
    }
    let next = c + 1;
    if next >= requests.len() {
        return Ok(marker(None, true));
    }
    let body = intent_utterance(&requests[next], rng);
    let text = if planned && !last.is_empty() {
        let ack = pick(rng, &["Thanks, so", "Great, so", "Perfect:", "Noted,"]);
        format!("{ack} {}. Next, {}", echo(last), lower_first(&body))
    } else {
        let ack = pick(rng, &["Something else.", "New question.", "Another thing.", "Okay."]);
        format!("{ack} {body}")
    };
    Ok(format!("{}\n{text}", marker(Some(next), true)))
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(f) => f.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

impl SimulatedBackend {
    fn answered_question(&self, request: &ChatRequest) -> bool {
        let mut rest = request.messages.iter().rev().skip_while(|m| m.role == Role::User);
        rest.next()
            .is_some_and(|m| m.role == Role::Assistant && m.content.contains(ASK_MARKER))
    }

    fn assistant_reply(&self, request: &ChatRequest, rng: &mut ChaCha8Rng) -> ChatMessage {
        let tools = tool_views(&request.tools);
        let Some(last) = request.messages.iter().rev().find(|m| m.role != Role::System) else {
            return ChatMessage::assistant("Hello! How can I help?");
        };
        if last.role == Role::Tool {
            return ChatMessage::assistant(summarize_results(&request.messages, rng));
        }
        let mut matched: Vec<&ToolView> = tools.iter().filter(|t| t.mentioned_in(&last.content)).collect();
        if matched.is_empty() && self.answered_question(request) {
            // The user is supplying details for the request we asked about.
            if let Some(earlier) = request
                .messages
                .iter()
                .rev()
                .filter(|m| m.role == Role::User)
                .find(|m| tools.iter().any(|t| t.mentioned_in(&m.content)))
            {
                matched = tools.iter().filter(|t| t.mentioned_in(&earlier.content)).collect();
            }
        }
        if matched.is_empty() {
            let reply = pick(
                rng,
                &[
                    "Happy to chat! I don't need any tools for that, and I think it's a lovely topic.",
                    "Good question. Speaking just for myself, I find that one fascinating.",
                    "Sure thing. That's more of a conversation than a task, so here's my take: it depends on the day.",
                ],
            );
            return ChatMessage::assistant(reply);
        }
        if self.fault(request, FaultKind::NoToolCalls) {
            return ChatMessage::assistant(format!(
                "I'm sorry, I can't reach that service right now, but you could try to {} yourself.",
                matched[0].phrase()
            ));
        }
        let mut known = BTreeMap::new();
        for m in request.messages.iter().filter(|m| m.role == Role::User) {
            parse_assignments(&m.content, &mut known);
        }
        let missing: Vec<String> = matched
            .iter()
            .flat_map(|t| t.required())
            .filter(|(n, _, _)| !known.contains_key(n))
            .map(|(n, ty, _)| format!("{n} ({ty})"))
            .collect();
        if !missing.is_empty() {
            return ChatMessage::assistant(format!(
                "Happy to help with that. {ASK_MARKER} {}?",
                missing.join(", ")
            ));
        }
        let calls: Vec<ToolCall> = matched
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mut args = Map::new();
                for (n, _, _) in &t.params {
                    if let Some(v) = known.get(n) {
                        args.insert(n.clone(), v.clone());
                    }
                }
                let mut name = t.name.clone();
                if self.fault(request, FaultKind::UnknownTool) {
                    name.push_str("_v2");
                }
                if self.fault(request, FaultKind::WrongArgumentType) {
                    if let Some((n, ty, _)) = t.params.first() {
                        args.insert(n.clone(), wrong_value(ty));
                    }
                }
                ToolCall::new(format!("call_{k}"), name, &Value::Object(args))
            })
            .collect();
        ChatMessage::assistant_calls(calls)
    }
}

fn render_scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn summarize_results(messages: &[ChatMessage], rng: &mut ChaCha8Rng) -> String {
    let tail: Vec<&ChatMessage> = messages.iter().rev().take_while(|m| m.role == Role::Tool).collect();
    let mut facts = Vec::new();
    for m in tail.iter().rev() {
        if let Ok(Value::Object(o)) = serde_json::from_str::<Value>(&m.content) {
            facts.extend(o.iter().map(|(k, v)| format!("{k} is {}", render_scalar(v))));
        }
    }
    if facts.is_empty() {
        return pick(rng, &["All done, that went through.", "Done! The request was completed."]).into();
    }
    let lead = pick(rng, &["Here is what I found:", "Done. The results:", "I checked, and"]);
    format!("{lead} {}.", facts.join("; "))
}

fn tool_reply(system: &str, user: &str, rng: &mut ChaCha8Rng) -> Result<String, LlmError> {
    let record = fenced_value(system)?;
    let tool = ToolView::from_value(&record).ok_or_else(|| script_err("tool block is not a tool record"))?;
    let args = user.split_once("Arguments: ").map(|(_, a)| a).unwrap_or("");
    let mut local = ChaCha8Rng::seed_from_u64(fnv1a(args.as_bytes()) ^ rng.random::<u64>());
    let out: Map<String, Value> = tool
        .results
        .iter()
        .map(|(k, ty)| (k.clone(), sample_value(ty, &mut local)))
        .collect();
    Ok(Value::Object(out).to_string())
}

fn rubric_reply(user: &str) -> String {
    let transcript = user.split_once("Dialogue:\n").map(|(_, t)| t).unwrap_or(user);
    let has_results = transcript.contains("TOOL RESULT:");
    let bad_call = transcript.contains("unknown tool");
    let asks = transcript.matches(ASK_MARKER).count();
    let nat = if transcript.contains("once more") { 2 } else { 4 };
    let coh = if asks > 0 { 5 } else { 4 };
    let help = if has_results { 5 } else { 2 };
    let acc = if bad_call { 2 } else if has_results { 5 } else { 3 };
    format!("The assistant's behaviour was reviewed turn by turn.\nNAT={nat} COH={coh} HELP={help} ACC={acc}")
}

fn enrich_reply(user: &str) -> String {
    let field = user
        .split_once("Field missing a description: ")
        .map(|(_, f)| f.trim())
        .unwrap_or("description");
    let name = prompts::fenced_json(user)
        .and_then(|b| serde_json::from_str::<Value>(b).ok())
        .and_then(|v| v.pointer("/function/name").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| "the tool".into());
    let description = match field.split_once('.') {
        Some((_, seg)) => format!("The {seg} value used by {name}."),
        None => format!("Look up information with {name}."),
    };
    json!({ "description": description }).to_string()
}
