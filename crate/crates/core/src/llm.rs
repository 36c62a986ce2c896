//! Chat-completion backends: the message model, the backend trait, a
//! retrying HTTP client with a token-bucket rate limiter, a scripted mock,
//! and seeded model-pool selection.

use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no messages supplied")]
    EmptyMessages,
    #[error("model pool is empty")]
    EmptyPool,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("hallucinated tool `{0}` is not among the supplied tool schemas")]
    HallucinatedTool(String),
    #[error("tool call `{name}` has invalid arguments: {reason}")]
    InvalidArguments { name: String, reason: String },
    #[error("no script rule matched prompt: {0}")]
    NoScriptMatch(String),
    #[error("invalid script: {0}")]
    Script(String),
}

impl LlmError {
    /// Errors that come from the backend's output rather than its
    /// availability; callers re-prompt on these.
    pub fn is_output_error(&self) -> bool {
        matches!(
            self,
            LlmError::Malformed(_)
                | LlmError::HallucinatedTool(_)
                | LlmError::InvalidArguments { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// A function call requested by an assistant message. Serialized in the
/// chat-completions shape `{id, type: "function", function: {name, arguments}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// JSON object text.
    pub arguments: String,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: &Value) -> Self {
        ToolCall {
            id: id.into(),
            name: name.into(),
            arguments: serde_json::to_string(arguments).unwrap_or_else(|_| "{}".into()),
        }
    }

    /// Parse `arguments` as a JSON object.
    pub fn parsed_arguments(&self) -> Result<serde_json::Map<String, Value>, String> {
        match serde_json::from_str::<Value>(&self.arguments) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(other) => Err(format!("arguments are not a JSON object: {other}")),
            Err(e) => Err(format!("arguments are not valid JSON: {e}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: Value,
}

#[derive(Serialize, Deserialize)]
struct WireToolCall {
    #[serde(default)]
    id: String,
    #[serde(rename = "type", default = "function_type")]
    kind: String,
    function: WireFunction,
}

fn function_type() -> String {
    "function".into()
}

impl Serialize for ToolCall {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WireToolCall {
            id: self.id.clone(),
            kind: function_type(),
            function: WireFunction {
                name: self.name.clone(),
                arguments: Value::String(self.arguments.clone()),
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ToolCall {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = WireToolCall::deserialize(d)?;
        // Some servers send arguments as an object instead of a string.
        let arguments = match wire.function.arguments {
            Value::String(s) => s,
            Value::Null => "{}".into(),
            other => other.to_string(),
        };
        Ok(ToolCall {
            id: wire.id,
            name: wire.function.name,
            arguments,
        })
    }
}

fn null_as_empty<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(Option::<String>::deserialize(d)?.unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    /// Model that generated this message; not sent over the wire.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
            model: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_calls(calls: Vec<ToolCall>) -> Self {
        ChatMessage {
            tool_calls: calls,
            ..Self::plain(Role::Assistant, "")
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    pub fn has_tool_calls(&self) -> bool {
        !self.tool_calls.is_empty()
    }

    fn to_wire(&self) -> Value {
        let mut v = json!({ "role": self.role.as_str() });
        if self.tool_calls.is_empty() {
            v["content"] = Value::String(self.content.clone());
        } else {
            v["content"] = if self.content.is_empty() {
                Value::Null
            } else {
                Value::String(self.content.clone())
            };
            v["tool_calls"] = serde_json::to_value(&self.tool_calls).unwrap_or(Value::Null);
        }
        if let Some(id) = &self.tool_call_id {
            v["tool_call_id"] = Value::String(id.clone());
        }
        v
    }
}

/// Check that every tool message answers a tool call of the assistant
/// message batch immediately before it, each call exactly once.
pub fn check_tool_correlation(messages: &[ChatMessage]) -> Result<(), String> {
    let mut pending: Vec<&str> = Vec::new();
    let mut answered: HashSet<&str> = HashSet::new();
    for (idx, m) in messages.iter().enumerate() {
        match m.role {
            Role::Tool => {
                let id = m
                    .tool_call_id
                    .as_deref()
                    .ok_or_else(|| format!("message {idx}: tool message without tool_call_id"))?;
                if !pending.contains(&id) {
                    return Err(format!(
                        "message {idx}: tool_call_id `{id}` does not match the preceding assistant tool calls"
                    ));
                }
                if !answered.insert(id) {
                    return Err(format!("message {idx}: tool_call_id `{id}` answered twice"));
                }
            }
            Role::Assistant => {
                pending = m.tool_calls.iter().map(|c| c.id.as_str()).collect();
                answered.clear();
            }
            _ => {
                pending.clear();
                answered.clear();
            }
        }
        if m.role != Role::Assistant && !m.tool_calls.is_empty() {
            return Err(format!("message {idx}: tool_calls on a {} message", m.role.as_str()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// End-user tag forwarded as the chat-completions `user` field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            max_tokens: 1024,
            seed: None,
            user: None,
        }
    }
}

impl GenerationParams {
    pub fn with_seed(&self, seed: u64) -> Self {
        GenerationParams {
            seed: Some(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub params: GenerationParams,
    /// Function schemas in the `{type: "function", function: {...}}` shape.
    pub tools: Vec<Value>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, params: GenerationParams) -> Self {
        ChatRequest {
            messages,
            params,
            tools: Vec::new(),
        }
    }

    pub fn with_tools(mut self, tools: Vec<Value>) -> Self {
        self.tools = tools;
        self
    }

    fn tool_names(&self) -> Vec<&str> {
        self.tools
            .iter()
            .filter_map(|t| t.pointer("/function/name").and_then(Value::as_str))
            .collect()
    }

    /// All message contents joined; what scripted rules match against.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    fn to_wire(&self, model: &str) -> Value {
        let mut body = json!({
            "model": model,
            "messages": self.messages.iter().map(ChatMessage::to_wire).collect::<Vec<_>>(),
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_tokens,
        });
        if !self.tools.is_empty() {
            body["tools"] = Value::Array(self.tools.clone());
        }
        if let Some(seed) = self.params.seed {
            body["seed"] = json!(seed);
        }
        if let Some(user) = &self.params.user {
            body["user"] = json!(user);
        }
        body
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// One raw completion. Implementations handle their own transport
    /// retries; output validation happens in [`complete`].
    async fn send(&self, request: &ChatRequest) -> Result<ChatMessage, LlmError>;
}

/// Send `request` to `backend` and validate the reply: it must be an
/// assistant message, and any tool calls must name a supplied tool and carry
/// a JSON-object argument string. The reply is stamped with the model id.
pub async fn complete(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
) -> Result<ChatMessage, LlmError> {
    complete_with(backend, request, true).await
}

/// Like [`complete`]; with `validate_calls` off, tool calls are passed
/// through unchecked so a downstream filter sees them as produced.
pub async fn complete_with(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    validate_calls: bool,
) -> Result<ChatMessage, LlmError> {
    if request.messages.is_empty() {
        return Err(LlmError::EmptyMessages);
    }
    let mut reply = backend.send(request).await?;
    if reply.role != Role::Assistant {
        return Err(LlmError::Malformed(format!(
            "expected an assistant message, got role {}",
            reply.role.as_str()
        )));
    }
    if validate_calls && reply.has_tool_calls() {
        let names = request.tool_names();
        for call in &reply.tool_calls {
            if !names.contains(&call.name.as_str()) {
                return Err(LlmError::HallucinatedTool(call.name.clone()));
            }
            call.parsed_arguments()
                .map_err(|reason| LlmError::InvalidArguments {
                    name: call.name.clone(),
                    reason,
                })?;
        }
    }
    reply.model = Some(backend.model_id().to_string());
    Ok(reply)
}

/// Uniform seeded choice from a pool of model ids.
pub fn pick_model(pool: &[String], seed: u64) -> Result<&str, LlmError> {
    if pool.is_empty() {
        return Err(LlmError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(&pool[rng.random_range(0..pool.len())])
}

/// A set of interchangeable backends, one per model id.
#[derive(Clone)]
pub struct ModelPool {
    backends: Vec<Arc<dyn ChatBackend>>,
}

impl ModelPool {
    pub fn new(backends: Vec<Arc<dyn ChatBackend>>) -> Result<Self, LlmError> {
        if backends.is_empty() {
            return Err(LlmError::EmptyPool);
        }
        Ok(ModelPool { backends })
    }

    pub fn single(backend: Arc<dyn ChatBackend>) -> Self {
        ModelPool {
            backends: vec![backend],
        }
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.backends.iter().map(|b| b.model_id().to_string()).collect()
    }

    pub fn pick(&self, seed: u64) -> Arc<dyn ChatBackend> {
        let ids = self.model_ids();
        let chosen = pick_model(&ids, seed).expect("pool is non-empty");
        let idx = ids.iter().position(|m| m == chosen).unwrap_or(0);
        Arc::clone(&self.backends[idx])
    }
}

/// Token bucket limiting requests per minute.
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    state: tokio::sync::Mutex<(f64, tokio::time::Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let capacity = f64::from(requests.max(1));
        RateLimiter {
            capacity,
            per_second: capacity / 60.0,
            state: tokio::sync::Mutex::new((capacity, tokio::time::Instant::now())),
        }
    }

    pub async fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().await;
                let now = tokio::time::Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.per_second).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.per_second)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_retry_limit() -> usize {
    3
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_backoff_ms() -> u64 {
    500
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.into(),
            api_key: None,
            retry_limit: default_retry_limit(),
            timeout_secs: default_timeout_secs(),
            requests_per_minute: None,
            backoff_ms: default_backoff_ms(),
        }
    }
}

/// Remote chat-completions client. Clones made with [`with_model`] share the
/// connection pool, rate limiter and attempt counter.
///
/// [`with_model`]: HttpChatBackend::with_model
#[derive(Clone)]
pub struct HttpChatBackend {
    config: Arc<HttpBackendConfig>,
    model: String,
    client: reqwest::Client,
    limiter: Option<Arc<RateLimiter>>,
    attempts: Arc<AtomicUsize>,
}

impl HttpChatBackend {
    pub fn new(config: HttpBackendConfig, model: impl Into<String>) -> Result<Self, LlmError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let limiter = config
            .requests_per_minute
            .map(|rpm| Arc::new(RateLimiter::per_minute(rpm)));
        Ok(HttpChatBackend {
            config: Arc::new(config),
            model: model.into(),
            client,
            limiter,
            attempts: Arc::new(AtomicUsize::new(0)),
        })
    }

    pub fn with_model(&self, model: impl Into<String>) -> Self {
        HttpChatBackend {
            model: model.into(),
            ..self.clone()
        }
    }

    /// Total HTTP attempts made through this client family.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    async fn attempt(&self, body: &Value) -> Result<Value, (bool, LlmError)> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire().await;
        }
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| (true, LlmError::Transport(e.to_string())))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| (true, LlmError::Transport(e.to_string())))?;
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err((
                retryable,
                LlmError::Http {
                    status: status.as_u16(),
                    body: text,
                },
            ));
        }
        serde_json::from_str(&text).map_err(|e| (false, LlmError::Malformed(e.to_string())))
    }
}

pub(crate) fn parse_chat_response(body: &Value) -> Result<ChatMessage, LlmError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| LlmError::Malformed("response has no choices[0].message".into()))?;
    serde_json::from_value(message.clone()).map_err(|e| LlmError::Malformed(e.to_string()))
}

#[async_trait]
impl ChatBackend for HttpChatBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    async fn send(&self, request: &ChatRequest) -> Result<ChatMessage, LlmError> {
        let body = request.to_wire(&self.model);
        let mut tries = 0;
        loop {
            tries += 1;
            match self.attempt(&body).await {
                Ok(v) => return parse_chat_response(&v),
                Err((false, e)) => return Err(e),
                Err((true, e)) => {
                    if tries > self.config.retry_limit {
                        return Err(LlmError::RetriesExhausted {
                            attempts: tries,
                            last: e.to_string(),
                        });
                    }
                    let backoff = self.config.backoff_ms.saturating_mul(1 << (tries - 1).min(6));
                    tracing::warn!(attempt = tries, error = %e, "retrying chat request");
                    tokio::time::sleep(Duration::from_millis(backoff)).await;
                }
            }
        }
    }
}

/// One canned reply: plain content, tool calls, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Message {
        #[serde(default)]
        content: String,
        #[serde(default)]
        tool_calls: Vec<ScriptedCall>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCall {
    #[serde(default)]
    pub id: String,
    pub name: String,
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

fn empty_object() -> Value {
    json!({})
}

impl ScriptedReply {
    fn to_message(&self) -> ChatMessage {
        match self {
            ScriptedReply::Text(t) => ChatMessage::assistant(t.clone()),
            ScriptedReply::Message {
                content,
                tool_calls,
            } => {
                let calls = tool_calls
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let id = if c.id.is_empty() {
                            format!("call_{i}")
                        } else {
                            c.id.clone()
                        };
                        // String arguments are passed through verbatim so
                        // scripts can emit malformed JSON on purpose.
                        let arguments = match &c.arguments {
                            Value::String(s) => s.clone(),
                            other => other.to_string(),
                        };
                        ToolCall {
                            id,
                            name: c.name.clone(),
                            arguments,
                        }
                    })
                    .collect();
                ChatMessage {
                    content: content.clone(),
                    ..ChatMessage::assistant_calls(calls)
                }
            }
        }
    }
}

/// Matches when the last message has `role` (if given) and `pattern` is
/// found in the prompt text. Replies are consumed in order; once exhausted
/// the last reply repeats when `repeat_last` is set, otherwise the rule
/// stops matching.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub role: Option<Role>,
    pub pattern: String,
    pub replies: Vec<ScriptedReply>,
    #[serde(default = "default_true")]
    pub repeat_last: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Script {
    #[serde(default = "default_script_model")]
    pub model: String,
    pub rules: Vec<ScriptRule>,
}

fn default_script_model() -> String {
    "mock-scripted".into()
}

impl ScriptRule {
    pub fn new(pattern: &str, replies: Vec<ScriptedReply>) -> Self {
        ScriptRule {
            role: None,
            pattern: pattern.into(),
            replies,
            repeat_last: true,
        }
    }

    pub fn once(pattern: &str, reply: ScriptedReply) -> Self {
        ScriptRule {
            repeat_last: false,
            ..Self::new(pattern, vec![reply])
        }
    }

    pub fn for_role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }
}

/// Deterministic backend driven by an ordered list of rules. Prompts that no
/// rule matches are an error.
pub struct ScriptedBackend {
    model: String,
    rules: Vec<(ScriptRule, Regex)>,
    cursors: Mutex<Vec<usize>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Result<Self, LlmError> {
        let mut rules = Vec::with_capacity(script.rules.len());
        for rule in script.rules {
            if rule.replies.is_empty() {
                return Err(LlmError::Script(format!("rule `{}` has no replies", rule.pattern)));
            }
            let re = Regex::new(&rule.pattern)
                .map_err(|e| LlmError::Script(format!("bad pattern `{}`: {e}", rule.pattern)))?;
            rules.push((rule, re));
        }
        let n = rules.len();
        Ok(ScriptedBackend {
            model: script.model,
            rules,
            cursors: Mutex::new(vec![0; n]),
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_rules(model: &str, rules: Vec<ScriptRule>) -> Result<Self, LlmError> {
        Self::new(Script {
            model: model.into(),
            rules,
        })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        let script: Script =
            serde_json::from_str(&text).map_err(|e| LlmError::Script(e.to_string()))?;
        Self::new(script)
    }

    /// Number of `send` calls so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    async fn send(&self, request: &ChatRequest) -> Result<ChatMessage, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.prompt_text();
        let last_role = request.messages.last().map(|m| m.role);
        let mut cursors = self.cursors.lock().expect("script cursor lock");
        for (idx, (rule, re)) in self.rules.iter().enumerate() {
            if rule.role.is_some() && rule.role != last_role {
                continue;
            }
            if !re.is_match(&prompt) {
                continue;
            }
            let cursor = cursors[idx];
            let reply = if cursor < rule.replies.len() {
                &rule.replies[cursor]
            } else if rule.repeat_last {
                rule.replies.last().expect("non-empty replies")
            } else {
                continue;
            };
            cursors[idx] += 1;
            return Ok(reply.to_message());
        }
        let excerpt: String = prompt.chars().rev().take(200).collect::<Vec<_>>().into_iter().rev().collect();
        Err(LlmError::NoScriptMatch(excerpt))
    }
}
