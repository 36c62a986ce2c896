//! Remote clients against a local server that fails the first request of
//! every route with 429.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use toolflow_core::embedding::{EmbeddingProvider, HttpEmbedder};
use toolflow_core::llm::{self, ChatMessage, ChatRequest, GenerationParams, HttpBackendConfig, HttpChatBackend, LlmError};
use toolflow_core::metrics::{HttpNli, NliClassifier, NliLabel};

#[derive(Clone, Default)]
struct Counters {
    chat: Arc<AtomicUsize>,
    embed: Arc<AtomicUsize>,
    nli: Arc<AtomicUsize>,
    bodies: Arc<std::sync::Mutex<Vec<Value>>>,
}

fn first_fails(counter: &AtomicUsize) -> bool {
    counter.fetch_add(1, Ordering::SeqCst) == 0
}

async fn chat(State(c): State<Counters>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    c.bodies.lock().unwrap().push(body);
    if first_fails(&c.chat) {
        return (StatusCode::TOO_MANY_REQUESTS, Json(json!({"error": "slow down"})));
    }
    (
        StatusCode::OK,
        Json(json!({
            "choices": [{"message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "id": "call_9",
                    "type": "function",
                    "function": {"name": "get_weather", "arguments": "{\"location\":\"Oslo\"}"}
                }]
            }}]
        })),
    )
}

async fn embed(State(c): State<Counters>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if first_fails(&c.embed) {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({})));
    }
    let n = body["input"].as_array().map_or(0, Vec::len);
    // Answer out of order; the client must place vectors by index.
    let data: Vec<Value> = (0..n)
        .rev()
        .map(|i| json!({"index": i, "embedding": [i as f64 + 1.0, 1.0]}))
        .collect();
    (StatusCode::OK, Json(json!({ "data": data })))
}

async fn nli(State(c): State<Counters>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if first_fails(&c.nli) {
        return (StatusCode::TOO_MANY_REQUESTS, Json(json!({})));
    }
    let label = if body["premise"] == body["hypothesis"] {
        "entailment"
    } else {
        "neutral"
    };
    (StatusCode::OK, Json(json!({ "label": label, "scores": {label: 0.9} })))
}

async fn serve() -> (String, Counters) {
    let counters = Counters::default();
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embed))
        .route("/nli", post(nli))
        .with_state(counters.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), counters)
}

fn weather_schema() -> Value {
    json!({"type": "function", "function": {
        "name": "get_weather",
        "description": "Weather",
        "parameters": {"type": "object", "properties": {"location": {"type": "string", "description": "city"}}, "required": ["location"]}
    }})
}

#[tokio::test]
async fn chat_retries_after_429() {
    let (base, counters) = serve().await;
    let config = HttpBackendConfig {
        retry_limit: 2,
        backoff_ms: 5,
        api_key: Some("k".into()),
        ..HttpBackendConfig::new(format!("{base}/v1/chat/completions"))
    };
    let backend = HttpChatBackend::new(config, "remote-a").unwrap();
    let params = GenerationParams {
        seed: Some(7),
        user: Some("dlg-000003".into()),
        ..GenerationParams::default()
    };
    let request = ChatRequest::new(vec![ChatMessage::user("weather in Oslo?")], params).with_tools(vec![weather_schema()]);
    let reply = llm::complete(&backend, &request).await.unwrap();
    assert_eq!(backend.attempts(), 2);
    assert_eq!(reply.tool_calls[0].name, "get_weather");
    assert_eq!(reply.model.as_deref(), Some("remote-a"));

    let bodies = counters.bodies.lock().unwrap();
    let sent = &bodies[0];
    assert_eq!(sent["model"], "remote-a");
    assert_eq!(sent["seed"], 7);
    assert_eq!(sent["user"], "dlg-000003");
    assert_eq!(sent["tools"][0]["function"]["name"], "get_weather");
}

#[tokio::test]
async fn chat_gives_up_when_retries_run_out() {
    let (base, _) = serve().await;
    let config = HttpBackendConfig {
        retry_limit: 0,
        backoff_ms: 1,
        ..HttpBackendConfig::new(format!("{base}/v1/chat/completions"))
    };
    let backend = HttpChatBackend::new(config, "remote-a").unwrap();
    let request = ChatRequest::new(vec![ChatMessage::user("hi")], GenerationParams::default());
    let err = llm::complete(&backend, &request).await.unwrap_err();
    assert!(matches!(err, LlmError::RetriesExhausted { attempts: 1, .. }), "{err}");
}

#[tokio::test]
async fn chat_reply_naming_unsupplied_tool_is_rejected() {
    let (base, _) = serve().await;
    let config = HttpBackendConfig {
        backoff_ms: 1,
        ..HttpBackendConfig::new(format!("{base}/v1/chat/completions"))
    };
    let backend = HttpChatBackend::new(config, "remote-a").unwrap();
    let request = ChatRequest::new(vec![ChatMessage::user("hi")], GenerationParams::default());
    let err = llm::complete(&backend, &request).await.unwrap_err();
    assert!(matches!(err, LlmError::HallucinatedTool(ref n) if n == "get_weather"), "{err}");
}

#[tokio::test]
async fn embeddings_retry_and_reorder() {
    let (base, counters) = serve().await;
    let provider = HttpEmbedder::new(format!("{base}/v1/embeddings"), "embed-small", None)
        .unwrap()
        .with_retries(2, Duration::from_millis(5));
    let texts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let vectors = provider.embed(&texts).await.unwrap();
    assert_eq!(counters.embed.load(Ordering::SeqCst), 2);
    let firsts: Vec<f64> = vectors.iter().map(|v| v.values()[0]).collect();
    assert_eq!(firsts, vec![1.0, 2.0, 3.0]);
}

#[tokio::test]
async fn nli_retries() {
    let (base, counters) = serve().await;
    let nli = HttpNli::new(format!("{base}/nli")).unwrap();
    let r = nli.classify("it rains", "it rains").await.unwrap();
    assert_eq!(r.label, NliLabel::Entailment);
    assert_eq!(counters.nli.load(Ordering::SeqCst), 2);
    assert_eq!(nli.classify("a", "b").await.unwrap().label, NliLabel::Neutral);
}
