//! Field descriptors to vectors: key rendering, cosine similarity, the
//! provider interface (mock, lookup table, HTTP), and the JSONL cache.

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::{ParameterSpec, ReturnSpec, ToolCatalog, ToolSpec};
use crate::text;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("vector has no entries or a non-finite entry")]
    InvalidVector,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("no embedding for `{0}`")]
    Missing(String),
    #[error("cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1]. Zero vectors are an error.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch(a.dim(), b.dim()));
    }
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    // sqrt(aa * bb) is exactly aa when a == b, so self-similarity is 1.0.
    Ok((dot / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Parameter,
    Return,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EmbeddingKey {
    pub kind: FieldKind,
    pub tool_name: String,
    pub field_name: String,
    /// `"{name}: {description}"`
    pub text: String,
}

fn key_text(name: &str, description: &str) -> String {
    format!("{name}: {description}")
}

pub fn parameter_key(spec: &ParameterSpec, tool: &ToolSpec) -> EmbeddingKey {
    EmbeddingKey {
        kind: FieldKind::Parameter,
        tool_name: tool.name.clone(),
        field_name: spec.name.clone(),
        text: key_text(&spec.name, &spec.description),
    }
}

pub fn return_key(spec: &ReturnSpec, tool: &ToolSpec) -> EmbeddingKey {
    EmbeddingKey {
        kind: FieldKind::Return,
        tool_name: tool.name.clone(),
        field_name: spec.name.clone(),
        text: key_text(&spec.name, &spec.description),
    }
}

/// All keys of a tool: parameters first, then returns, each in tool order.
pub fn tool_keys(tool: &ToolSpec) -> Vec<EmbeddingKey> {
    tool.parameters
        .iter()
        .map(|p| parameter_key(p, tool))
        .chain(tool.returns.iter().map(|r| return_key(r, tool)))
        .collect()
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;

    /// Known output dimension, if fixed.
    fn dim(&self) -> Option<usize> {
        None
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

/// Offline provider: each token of the standard tokenizer is hashed
/// (FNV-1a) into one of `dim` buckets; the counts are L2-normalized.
pub struct MockEmbedder {
    dim: usize,
    calls: AtomicUsize,
    texts: AtomicUsize,
}

pub const MOCK_DIM: usize = 64;

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(MOCK_DIM)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        MockEmbedder {
            dim: dim.max(1),
            calls: AtomicUsize::new(0),
            texts: AtomicUsize::new(0),
        }
    }

    /// Number of `embed` batches served.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Number of individual texts embedded.
    pub fn texts_embedded(&self) -> usize {
        self.texts.load(Ordering::SeqCst)
    }

    pub fn vector(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut v = vec![0.0; self.dim];
        for tok in text::tokenize(text) {
            v[(fnv1a(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        EmbeddingVector::new(v)
    }
}

#[async_trait]
impl EmbeddingProvider for MockEmbedder {
    fn model_id(&self) -> &str {
        "mock-token-hash"
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        texts.iter().map(|t| self.vector(t)).collect()
    }
}

/// Provider backed by an explicit text → vector table; unknown texts fail.
#[derive(Default)]
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
    calls: AtomicUsize,
}

impl TableEmbedder {
    pub fn new(table: HashMap<String, Vec<f64>>) -> Self {
        TableEmbedder {
            table,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f64>) {
        self.table.insert(text.into(), values);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl EmbeddingProvider for TableEmbedder {
    fn model_id(&self) -> &str {
        "table"
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        texts
            .iter()
            .map(|t| {
                let v = self.table.get(t).ok_or_else(|| EmbeddingError::Missing(t.clone()))?;
                EmbeddingVector::new(v.clone())
            })
            .collect()
    }
}

/// Client for an embeddings endpoint:
/// `POST {model, input: [..]}` → `{data: [{index, embedding}]}`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry_limit: usize,
    backoff: Duration,
    client: reqwest::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self, EmbeddingError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EmbeddingError::Provider(e.to_string()))?;
        Ok(HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            retry_limit: 3,
            backoff: Duration::from_millis(500),
            client,
        })
    }

    pub fn with_retries(mut self, retry_limit: usize, backoff: Duration) -> Self {
        self.retry_limit = retry_limit;
        self.backoff = backoff;
        self
    }

    async fn attempt(&self, body: &Value) -> Result<Value, (bool, String)> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().await.map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| (true, e.to_string()))?;
        if !status.is_success() {
            let retry = status.as_u16() == 429 || status.is_server_error();
            return Err((retry, format!("HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| (false, e.to_string()))
    }
}

#[async_trait]
impl EmbeddingProvider for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let body = json!({ "model": self.model, "input": texts });
        let mut tries = 0;
        let resp = loop {
            tries += 1;
            match self.attempt(&body).await {
                Ok(v) => break v,
                Err((true, e)) if tries <= self.retry_limit => {
                    tracing::warn!(attempt = tries, error = %e, "retrying embeddings request");
                    tokio::time::sleep(self.backoff * tries as u32).await;
                }
                Err((_, e)) => return Err(EmbeddingError::Provider(e)),
            }
        };
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbeddingError::Provider("response has no `data` array".into()))?;
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
            let values: Vec<f64> = serde_json::from_value(item.get("embedding").cloned().unwrap_or(Value::Null))
                .map_err(|e| EmbeddingError::Provider(format!("bad embedding: {e}")))?;
            let slot = out
                .get_mut(index)
                .ok_or_else(|| EmbeddingError::Provider(format!("index {index} out of range")))?;
            *slot = Some(EmbeddingVector::new(values)?);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| EmbeddingError::Provider(format!("no embedding for input {i}"))))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    text: String,
    dim: usize,
    values: Vec<f64>,
}

/// Append-only JSONL cache keyed by exact text. On reload the last record
/// for a text wins.
pub struct EmbeddingCache {
    path: PathBuf,
    entries: HashMap<String, EmbeddingVector>,
}

impl EmbeddingCache {
    pub fn open(path: &Path) -> Result<Self, EmbeddingError> {
        let cache_err = |message: String| EmbeddingError::Cache {
            path: path.display().to_string(),
            message,
        };
        let mut entries = HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(path).map_err(|e| cache_err(e.to_string()))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| cache_err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    // A torn final line from an interrupted run.
                    Err(_) => {
                        tracing::warn!(line = n + 1, "skipping unreadable cache line");
                        continue;
                    }
                };
                if rec.dim != rec.values.len() {
                    return Err(cache_err(format!("line {}: dim {} but {} values", n + 1, rec.dim, rec.values.len())));
                }
                entries.insert(rec.text, EmbeddingVector::new(rec.values)?);
            }
        }
        Ok(EmbeddingCache {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn get(&self, text: &str) -> Option<&EmbeddingVector> {
        self.entries.get(text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(EmbeddingVector::dim)
    }

    pub fn append(&mut self, new: &[(String, EmbeddingVector)]) -> Result<(), EmbeddingError> {
        if new.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for (text, v) in new {
            let rec = CacheRecord {
                text: text.clone(),
                dim: v.dim(),
                values: v.values().to_vec(),
            };
            buf.push_str(&serde_json::to_string(&rec).expect("cache record serializes"));
            buf.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| EmbeddingError::Cache {
                path: self.path.display().to_string(),
                message: e.to_string(),
            })?;
        f.write_all(buf.as_bytes()).map_err(|e| EmbeddingError::Cache {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })?;
        for (text, v) in new {
            self.entries.insert(text.clone(), v.clone());
        }
        Ok(())
    }
}

/// Vectors for every field of a catalog, keyed by text.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    vectors: HashMap<String, EmbeddingVector>,
    keys: Vec<EmbeddingKey>,
}

impl EmbeddingStore {
    pub fn from_parts(keys: Vec<EmbeddingKey>, vectors: HashMap<String, EmbeddingVector>) -> Self {
        EmbeddingStore { vectors, keys }
    }

    pub fn get(&self, key: &EmbeddingKey) -> Option<&EmbeddingVector> {
        self.vectors.get(&key.text)
    }

    pub fn get_text(&self, text: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(text)
    }

    pub fn keys(&self) -> &[EmbeddingKey] {
        &self.keys
    }

    /// Number of keyed fields.
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Number of distinct texts.
    pub fn distinct_texts(&self) -> usize {
        self.vectors.len()
    }
}

pub const EMBED_BATCH: usize = 64;

/// Embed `texts`, consulting and extending `cache` when given. Returns one
/// vector per distinct text.
pub async fn embed_texts(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    mut cache: Option<&mut EmbeddingCache>,
) -> Result<HashMap<String, EmbeddingVector>, EmbeddingError> {
    let mut out = HashMap::new();
    let mut missing = Vec::new();
    let mut seen = HashSet::new();
    for t in texts {
        if !seen.insert(t.as_str()) {
            continue;
        }
        match cache.as_ref().and_then(|c| c.get(t)) {
            Some(v) => {
                out.insert(t.clone(), v.clone());
            }
            None => missing.push(t.clone()),
        }
    }
    let expected_dim = cache.as_ref().and_then(|c| c.dim()).or_else(|| provider.dim());
    if let (Some(c), Some(p)) = (cache.as_ref().and_then(|c| c.dim()), provider.dim()) {
        if c != p {
            return Err(EmbeddingError::DimMismatch(c, p));
        }
    }
    let mut fetched = Vec::with_capacity(missing.len());
    for chunk in missing.chunks(EMBED_BATCH) {
        let vectors = provider.embed(chunk).await?;
        if vectors.len() != chunk.len() {
            return Err(EmbeddingError::Provider(format!(
                "asked for {} vectors, got {}",
                chunk.len(),
                vectors.len()
            )));
        }
        for (t, v) in chunk.iter().zip(vectors) {
            fetched.push((t.clone(), v));
        }
    }
    let dim = expected_dim.or_else(|| fetched.first().map(|(_, v)| v.dim()));
    if let Some(d) = dim {
        if let Some(v) = fetched.iter().map(|(_, v)| v).chain(out.values()).find(|v| v.dim() != d) {
            return Err(EmbeddingError::DimMismatch(d, v.dim()));
        }
    }
    if let Some(c) = cache.as_mut() {
        c.append(&fetched)?;
    }
    out.extend(fetched);
    Ok(out)
}

/// One vector for every parameter and return value in the catalog.
pub async fn embed_catalog(
    catalog: &ToolCatalog,
    provider: &dyn EmbeddingProvider,
    cache: Option<&Path>,
) -> Result<EmbeddingStore, EmbeddingError> {
    let keys: Vec<EmbeddingKey> = catalog.tools.iter().flat_map(tool_keys).collect();
    let texts: Vec<String> = keys.iter().map(|k| k.text.clone()).collect();
    let mut cache = cache.map(EmbeddingCache::open).transpose()?;
    let vectors = embed_texts(&texts, provider, cache.as_mut()).await?;
    Ok(EmbeddingStore::from_parts(keys, vectors))
}
