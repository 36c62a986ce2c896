//! Corpus statistics and quality metrics: token / call counts, Shannon
//! entropy, distinct-n, turn-pair coherence (embedding similarity and NLI
//! entailment ratio), LLM rubric scores, and Pearson correlation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::ToolSpec;
use crate::dialogue::{render_transcript, Dialogue};
use crate::embedding::{self, EmbeddingError, EmbeddingProvider};
use crate::llm::{self, ChatBackend, ChatMessage, ChatRequest, GenerationParams, LlmError, Role};
use crate::prompts;
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("no message has at least {0} tokens")]
    TooShort(usize),
    #[error("no pairs: corpus has no consecutive user turns")]
    NoPairs,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("NLI classifier failure: {0}")]
    Nli(String),
    #[error("sample size {requested} exceeds corpus size {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two points")]
    TooFewPoints,
    #[error("zero variance")]
    ZeroVariance,
}

/// Which message text the metrics see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricScope {
    /// Include tool-message JSON and tool-call argument blobs.
    pub include_tool_content: bool,
}

impl MetricScope {
    /// User and assistant natural language only.
    pub const DIALOGUE: MetricScope = MetricScope {
        include_tool_content: false,
    };
    /// Everything, tool traffic included.
    pub const FULL: MetricScope = MetricScope {
        include_tool_content: true,
    };
}

/// Message texts of `d` under `scope`, one entry per text unit.
pub fn scoped_texts(d: &Dialogue, scope: MetricScope) -> Vec<&str> {
    let mut out = Vec::new();
    for m in &d.messages {
        match m.role {
            Role::User | Role::Assistant => {
                if !m.content.is_empty() {
                    out.push(m.content.as_str());
                }
                if scope.include_tool_content {
                    out.extend(m.tool_calls.iter().map(|c| c.arguments.as_str()));
                }
            }
            Role::Tool if scope.include_tool_content => out.push(m.content.as_str()),
            _ => {}
        }
    }
    out
}

fn corpus_texts(dialogues: &[Dialogue], scope: MetricScope) -> Vec<&str> {
    dialogues.iter().flat_map(|d| scoped_texts(d, scope)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_tokens: usize,
    pub n_calls: usize,
    pub n_call_turns: usize,
}

pub fn corpus_stats(dialogues: &[Dialogue], scope: MetricScope) -> CorpusStats {
    let mut s = CorpusStats::default();
    for d in dialogues {
        s.n_tokens += scoped_texts(d, scope).iter().map(|t| tokenize(t).len()).sum::<usize>();
        for m in d.messages.iter().filter(|m| m.role == Role::Assistant) {
            s.n_calls += m.tool_calls.len();
            s.n_call_turns += usize::from(m.has_tool_calls());
        }
    }
    s
}

/// Entropy in bits of the word distribution over `texts`.
pub fn entropy_of_texts(texts: &[&str]) -> Result<f64, MetricsError> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for t in texts {
        for tok in tokenize(t) {
            *counts.entry(tok).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    let n = total as f64;
    // Sorted so the floating-point sum is order-independent.
    let mut freqs: Vec<usize> = counts.into_values().collect();
    freqs.sort_unstable();
    let h = -freqs
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

pub fn shannon_entropy(dialogues: &[Dialogue], scope: MetricScope) -> Result<f64, MetricsError> {
    entropy_of_texts(&corpus_texts(dialogues, scope))
}

/// Unique n-grams over total n-grams; windows stay inside one text.
pub fn distinct_n_of_texts(texts: &[&str], n: usize) -> Result<f64, MetricsError> {
    let n = n.max(1);
    let mut unique: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for t in texts {
        let toks = tokenize(t);
        for w in toks.windows(n) {
            unique.insert(w.to_vec());
            total += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::TooShort(n));
    }
    Ok(unique.len() as f64 / total as f64)
}

pub fn distinct_n(dialogues: &[Dialogue], n: usize, scope: MetricScope) -> Result<f64, MetricsError> {
    distinct_n_of_texts(&corpus_texts(dialogues, scope), n)
}

/// Premise: user request of turn t plus the assistant's reply; hypothesis:
/// the user request of turn t+1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPair {
    pub dialogue: String,
    pub turn: usize,
    pub premise: String,
    pub hypothesis: String,
}

fn join_nonempty<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn turn_pairs(d: &Dialogue, scope: MetricScope) -> Vec<TurnPair> {
    // Split into turns at each user message.
    let mut turns: Vec<(String, Vec<&str>)> = Vec::new();
    for m in &d.messages {
        match m.role {
            Role::User => turns.push((m.content.clone(), Vec::new())),
            Role::Assistant => {
                if let Some(t) = turns.last_mut() {
                    t.1.push(&m.content);
                    if scope.include_tool_content {
                        t.1.extend(m.tool_calls.iter().map(|c| c.arguments.as_str()));
                    }
                }
            }
            Role::Tool if scope.include_tool_content => {
                if let Some(t) = turns.last_mut() {
                    t.1.push(&m.content);
                }
            }
            _ => {}
        }
    }
    turns
        .windows(2)
        .enumerate()
        .filter_map(|(t, w)| {
            let premise = join_nonempty(std::iter::once(w[0].0.as_str()).chain(w[0].1.iter().copied()));
            let hypothesis = w[1].0.trim().to_string();
            (!premise.is_empty() && !hypothesis.is_empty()).then(|| TurnPair {
                dialogue: d.id.clone(),
                turn: t,
                premise,
                hypothesis,
            })
        })
        .collect()
}

pub fn corpus_turn_pairs(dialogues: &[Dialogue], scope: MetricScope) -> Vec<TurnPair> {
    dialogues.iter().flat_map(|d| turn_pairs(d, scope)).collect()
}

/// Mean premise/hypothesis cosine over all turn pairs, as a percentage.
pub async fn coherence_ss(
    dialogues: &[Dialogue],
    provider: &dyn EmbeddingProvider,
    scope: MetricScope,
) -> Result<f64, MetricsError> {
    let pairs = corpus_turn_pairs(dialogues, scope);
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let texts: Vec<String> = pairs.iter().flat_map(|p| [p.premise.clone(), p.hypothesis.clone()]).collect();
    let vectors = embedding::embed_texts(&texts, provider, None).await?;
    let mut sum = 0.0;
    for p in &pairs {
        sum += embedding::cosine(&vectors[&p.premise], &vectors[&p.hypothesis])?;
    }
    Ok(100.0 * sum / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliResult {
    pub label: NliLabel,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
}

#[async_trait]
pub trait NliClassifier: Send + Sync {
    async fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliResult, MetricsError>;
}

/// Returns the scripted labels in call order, cycling.
pub struct ScriptedNli {
    labels: Vec<NliLabel>,
    next: AtomicUsize,
}

impl ScriptedNli {
    pub fn new(labels: Vec<NliLabel>) -> Self {
        ScriptedNli {
            labels,
            next: AtomicUsize::new(0),
        }
    }

    pub fn constant(label: NliLabel) -> Self {
        Self::new(vec![label])
    }
}

#[async_trait]
impl NliClassifier for ScriptedNli {
    async fn classify(&self, _premise: &str, _hypothesis: &str) -> Result<NliResult, MetricsError> {
        if self.labels.is_empty() {
            return Err(MetricsError::Nli("scripted classifier has no labels".into()));
        }
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        Ok(NliResult {
            label: self.labels[i % self.labels.len()],
            scores: BTreeMap::new(),
        })
    }
}

/// Offline stand-in: entailment when the hypothesis shares at least
/// `threshold` of its distinct tokens with the premise, neutral otherwise.
pub struct LexicalNli {
    pub threshold: f64,
}

impl Default for LexicalNli {
    fn default() -> Self {
        LexicalNli { threshold: 0.2 }
    }
}

#[async_trait]
impl NliClassifier for LexicalNli {
    async fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliResult, MetricsError> {
        let p: HashSet<String> = tokenize(premise).into_iter().collect();
        let h: HashSet<String> = tokenize(hypothesis).into_iter().collect();
        let overlap = if h.is_empty() {
            0.0
        } else {
            h.intersection(&p).count() as f64 / h.len() as f64
        };
        let label = if overlap >= self.threshold {
            NliLabel::Entailment
        } else {
            NliLabel::Neutral
        };
        Ok(NliResult {
            label,
            scores: BTreeMap::from([("overlap".to_string(), overlap)]),
        })
    }
}

/// `POST {premise, hypothesis}` → `{label, scores}`.
pub struct HttpNli {
    endpoint: String,
    client: reqwest::Client,
    retry_limit: usize,
}

impl HttpNli {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, MetricsError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| MetricsError::Nli(e.to_string()))?;
        Ok(HttpNli {
            endpoint: endpoint.into(),
            client,
            retry_limit: 3,
        })
    }
}

#[async_trait]
impl NliClassifier for HttpNli {
    async fn classify(&self, premise: &str, hypothesis: &str) -> Result<NliResult, MetricsError> {
        let body = json!({ "premise": premise, "hypothesis": hypothesis });
        let mut last = String::new();
        for attempt in 0..=self.retry_limit {
            if attempt > 0 {
                tokio::time::sleep(Duration::from_millis(200 * attempt as u64)).await;
            }
            let resp = match self.client.post(&self.endpoint).json(&body).send().await {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().await.map_err(|e| MetricsError::Nli(e.to_string()))?;
            if status.as_u16() == 429 || status.is_server_error() {
                last = format!("HTTP {status}");
                continue;
            }
            if !status.is_success() {
                return Err(MetricsError::Nli(format!("HTTP {status}: {text}")));
            }
            return serde_json::from_str(&text).map_err(|e| MetricsError::Nli(format!("bad response: {e}")));
        }
        Err(MetricsError::Nli(format!("retries exhausted: {last}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NliBreakdown {
    pub pairs: usize,
    pub entailment: usize,
    pub neutral: usize,
    pub contradiction: usize,
}

impl NliBreakdown {
    fn pct(&self, k: usize) -> f64 {
        100.0 * k as f64 / self.pairs as f64
    }

    /// Entailment ratio as a percentage.
    pub fn enr(&self) -> f64 {
        self.pct(self.entailment)
    }

    pub fn neutral_ratio(&self) -> f64 {
        self.pct(self.neutral)
    }

    pub fn contradiction_ratio(&self) -> f64 {
        self.pct(self.contradiction)
    }
}

/// Classify every turn pair, in corpus order.
pub async fn nli_breakdown(
    dialogues: &[Dialogue],
    nli: &dyn NliClassifier,
    scope: MetricScope,
    workers: usize,
) -> Result<NliBreakdown, MetricsError> {
    let pairs = corpus_turn_pairs(dialogues, scope);
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let results: Vec<Result<NliResult, MetricsError>> = stream::iter(pairs.iter())
        .map(|p| nli.classify(&p.premise, &p.hypothesis))
        .buffered(workers.max(1))
        .collect()
        .await;
    let mut b = NliBreakdown {
        pairs: pairs.len(),
        ..NliBreakdown::default()
    };
    for r in results {
        match r?.label {
            NliLabel::Entailment => b.entailment += 1,
            NliLabel::Neutral => b.neutral += 1,
            NliLabel::Contradiction => b.contradiction += 1,
        }
    }
    Ok(b)
}

pub async fn coherence_enr(
    dialogues: &[Dialogue],
    nli: &dyn NliClassifier,
    scope: MetricScope,
) -> Result<f64, MetricsError> {
    Ok(nli_breakdown(dialogues, nli, scope, 1).await?.enr())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScores {
    #[serde(rename = "NAT")]
    pub nat: u8,
    #[serde(rename = "COH")]
    pub coh: u8,
    #[serde(rename = "HELP")]
    pub help: u8,
    #[serde(rename = "ACC")]
    pub acc: u8,
}

fn keyed_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)NAT\s*=\s*(\d+)\s*,?\s*COH\s*=\s*(\d+)\s*,?\s*HELP\s*=\s*(\d+)\s*,?\s*ACC\s*=\s*(\d+)")
            .expect("static regex")
    })
}

fn bare_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)[\s,]+(\d+)[\s,]+(\d+)[\s,]+(\d+)\s*$").expect("static regex"))
}

/// Scores from the judge's last non-empty line, either
/// `NAT=<i> COH=<i> HELP=<i> ACC=<i>` or four bare integers; each in 1..=5.
pub fn parse_rubric(reply: &str) -> Option<RubricScores> {
    let line = reply.lines().rev().find(|l| !l.trim().is_empty())?;
    let caps = keyed_line().captures(line).or_else(|| bare_line().captures(line))?;
    let mut v = [0u8; 4];
    for (k, slot) in v.iter_mut().enumerate() {
        let n: u8 = caps[k + 1].parse().ok()?;
        if !(1..=5).contains(&n) {
            return None;
        }
        *slot = n;
    }
    Some(RubricScores {
        nat: v[0],
        coh: v[1],
        help: v[2],
        acc: v[3],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricEntry {
    pub id: String,
    pub scores: Option<RubricScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RubricMeans {
    #[serde(rename = "NAT")]
    pub nat: f64,
    #[serde(rename = "COH")]
    pub coh: f64,
    #[serde(rename = "HELP")]
    pub help: f64,
    #[serde(rename = "ACC")]
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricReport {
    /// Means over dialogues with scores; `None` when none were scored.
    pub means: Option<RubricMeans>,
    pub scored: usize,
    /// Dialogues whose judge replies never parsed.
    pub missing: usize,
    pub per_dialogue: Vec<RubricEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RubricConfig {
    pub retries: usize,
    pub workers: usize,
    pub params: GenerationParams,
}

impl Default for RubricConfig {
    fn default() -> Self {
        RubricConfig {
            retries: 2,
            workers: 4,
            params: GenerationParams {
                temperature: 0.0,
                ..GenerationParams::default()
            },
        }
    }
}

/// Seeded uniform sample of `size` indices out of `len`, ascending.
pub fn sample_indices(len: usize, size: usize, seed: u64) -> Result<Vec<usize>, MetricsError> {
    if size > len {
        return Err(MetricsError::SampleTooLarge {
            requested: size,
            available: len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, len, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

async fn judge_one(d: &Dialogue, backend: &dyn ChatBackend, config: &RubricConfig, seed: u64) -> RubricEntry {
    let records: Vec<Value> = d.tools.iter().map(ToolSpec::to_record).collect();
    let tools_json = serde_json::to_string(&records).expect("records serialize");
    let messages = vec![
        ChatMessage::system(prompts::RUBRIC_SYSTEM),
        ChatMessage::user(prompts::render_rubric_user(&tools_json, &render_transcript(&d.messages))),
    ];
    let mut last = String::new();
    for attempt in 0..=config.retries {
        let params = config.params.with_seed(seed.wrapping_add(attempt as u64));
        match llm::complete(backend, &ChatRequest::new(messages.clone(), params)).await {
            Ok(reply) => match parse_rubric(&reply.content) {
                Some(scores) => {
                    return RubricEntry {
                        id: d.id.clone(),
                        scores: Some(scores),
                        error: None,
                    }
                }
                None => last = "no score line in judge reply".into(),
            },
            Err(e @ (LlmError::Malformed(_) | LlmError::NoScriptMatch(_))) => last = e.to_string(),
            Err(e) => {
                last = e.to_string();
                break;
            }
        }
    }
    RubricEntry {
        id: d.id.clone(),
        scores: None,
        error: Some(last),
    }
}

/// Score a seeded sample of `sample_size` dialogues with an LLM judge.
pub async fn rubric_eval(
    dialogues: &[Dialogue],
    backend: &dyn ChatBackend,
    sample_size: usize,
    seed: u64,
    config: &RubricConfig,
) -> Result<RubricReport, MetricsError> {
    let picked = sample_indices(dialogues.len(), sample_size, seed)?;
    let per_dialogue: Vec<RubricEntry> = stream::iter(picked.iter())
        .map(|&i| judge_one(&dialogues[i], backend, config, crate::seeds::derive(seed, &[i as u64])))
        .buffered(config.workers.max(1))
        .collect()
        .await;
    let scored: Vec<RubricScores> = per_dialogue.iter().filter_map(|e| e.scores).collect();
    let means = (!scored.is_empty()).then(|| {
        let n = scored.len() as f64;
        let mean = |f: fn(&RubricScores) -> u8| scored.iter().map(|s| f64::from(f(s))).sum::<f64>() / n;
        RubricMeans {
            nat: mean(|s| s.nat),
            coh: mean(|s| s.coh),
            help: mean(|s| s.help),
            acc: mean(|s| s.acc),
        }
    });
    Ok(RubricReport {
        means,
        scored: scored.len(),
        missing: per_dialogue.len() - scored.len(),
        per_dialogue,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFewPoints);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dialogues: usize,
    pub n_tokens: usize,
    pub n_calls: usize,
    pub n_call_turns: usize,
    /// Bits.
    pub entropy_h: Option<f64>,
    pub distinct_3: Option<f64>,
    /// Percentage.
    pub ss_mean: Option<f64>,
    /// Percentage.
    pub enr_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli: Option<NliBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubric: Option<RubricReport>,
    pub stats_scope: Option<MetricScope>,
    pub text_scope: Option<MetricScope>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        crate::canonical::to_canonical_string(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_of_texts(&["a b a b"]).unwrap(), 1.0);
        assert_eq!(entropy_of_texts(&["w w w"]).unwrap(), 0.0);
        assert!((entropy_of_texts(&["a a b c"]).unwrap() - 1.5).abs() < 1e-12);
        assert!(matches!(entropy_of_texts(&[" ", "!!"]), Err(MetricsError::EmptyCorpus)));
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n_of_texts(&["a b c d"], 3).unwrap(), 1.0);
        assert_eq!(distinct_n_of_texts(&["a a a a"], 3).unwrap(), 0.5);
        assert_eq!(distinct_n_of_texts(&["a b c", "a b c"], 3).unwrap(), 0.5);
        // No window crosses the message boundary: "b c | d" would make "b c d".
        assert_eq!(distinct_n_of_texts(&["a b c", "d e"], 3).unwrap(), 1.0);
        assert!(matches!(distinct_n_of_texts(&["a b", "c"], 3), Err(MetricsError::TooShort(3))));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[1.0]), Err(MetricsError::LengthMismatch(4, 1))));
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(MetricsError::ZeroVariance)));
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(MetricsError::TooFewPoints)));
    }

    #[test]
    fn rubric_parsing() {
        assert_eq!(
            parse_rubric("Solid dialogue.\nNAT=4 COH=5 HELP=3 ACC=2"),
            Some(RubricScores { nat: 4, coh: 5, help: 3, acc: 2 })
        );
        assert_eq!(parse_rubric("5 5 5 5"), Some(RubricScores { nat: 5, coh: 5, help: 5, acc: 5 }));
        assert_eq!(parse_rubric("NAT=6 COH=5 HELP=3 ACC=2"), None);
        assert_eq!(parse_rubric("NAT=4 COH=5 HELP=3 ACC=2\nbut wait"), None);
        assert_eq!(parse_rubric(""), None);
    }

    #[test]
    fn sample_is_seeded() {
        assert_eq!(sample_indices(10, 4, 7).unwrap(), sample_indices(10, 4, 7).unwrap());
        assert_eq!(sample_indices(5, 5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(sample_indices(3, 4, 1).is_err());
    }
}
