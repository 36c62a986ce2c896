//! Train/test leakage checks: shared long n-grams between a training corpus
//! and serialized test tools, and whole-tool embedding similarity.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ToolCatalog, ToolSpec};
use crate::dialogue::Dialogue;
use crate::embedding::{self, EmbeddingError, EmbeddingProvider};
use crate::text::tokenize;

pub const DEFAULT_MIN_NGRAM: usize = 11;
pub const DEFAULT_TOOL_THRESHOLD: f64 = 0.10;
pub const DEFAULT_SIM_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum OverlapError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("min n-gram length must be at least 1")]
    BadMinLen,
    #[error("training corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMethod {
    Ngram,
    Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Evidence {
    Ngram {
        witness: String,
        contaminated_tokens: usize,
        total_tokens: usize,
        fraction: f64,
    },
    Similarity {
        matched_tool: String,
        cosine: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakedTool {
    pub name: String,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ngram_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_contamination_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_threshold: Option<f64>,
}

/// Which side was treated as reference and which was checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    pub train: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub method: OverlapMethod,
    pub direction: Direction,
    pub test_tools: usize,
    /// Sorted by tool name.
    pub leaked_tools: Vec<LeakedTool>,
    /// Percentage of test tools that leaked.
    pub leak_ratio: f64,
    pub params: OverlapParams,
}

impl OverlapReport {
    fn new(
        method: OverlapMethod,
        direction: Direction,
        test_tools: usize,
        mut leaked_tools: Vec<LeakedTool>,
        params: OverlapParams,
    ) -> Self {
        leaked_tools.sort_by(|a, b| a.name.cmp(&b.name));
        let leak_ratio = 100.0 * leaked_tools.len() as f64 / test_tools as f64;
        OverlapReport {
            method,
            direction,
            test_tools,
            leaked_tools,
            leak_ratio,
            params,
        }
    }

    pub fn leaked_names(&self) -> Vec<&str> {
        self.leaked_tools.iter().map(|t| t.name.as_str()).collect()
    }
}

/// Per-tool contamination: which tokens are covered by a shared window.
#[derive(Debug, Clone, PartialEq)]
pub struct Contamination {
    pub contaminated: Vec<bool>,
    pub witness: Option<Vec<String>>,
}

impl Contamination {
    pub fn count(&self) -> usize {
        self.contaminated.iter().filter(|c| **c).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.contaminated.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.contaminated.len() as f64
        }
    }
}

/// All training n-grams of exactly `n` tokens. Windows never cross
/// sequence boundaries.
pub struct NgramIndex {
    n: usize,
    grams: HashSet<Vec<String>>,
}

impl NgramIndex {
    pub fn build<S: AsRef<[String]>>(sequences: &[S], n: usize) -> Self {
        let mut grams = HashSet::new();
        for s in sequences {
            for w in s.as_ref().windows(n) {
                grams.insert(w.to_vec());
            }
        }
        NgramIndex { n, grams }
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Any shared run of length >= n is a union of shared windows of
    /// exactly n, so marking every matching window covers it.
    pub fn contamination(&self, tokens: &[String]) -> Contamination {
        let mut contaminated = vec![false; tokens.len()];
        let mut witness = None;
        for (i, w) in tokens.windows(self.n).enumerate() {
            if self.grams.contains(w) {
                contaminated[i..i + self.n].iter_mut().for_each(|c| *c = true);
                witness.get_or_insert_with(|| w.to_vec());
            }
        }
        Contamination { contaminated, witness }
    }
}

/// Token-level core: `train` is a set of token sequences, `test` pairs each
/// tool name with its token sequence.
pub fn ngram_overlap_tokens(
    train: &[Vec<String>],
    test: &[(String, Vec<String>)],
    min_len: usize,
    tool_threshold: f64,
    direction: Direction,
) -> Result<OverlapReport, OverlapError> {
    if min_len == 0 {
        return Err(OverlapError::BadMinLen);
    }
    if train.iter().all(|s| s.is_empty()) {
        return Err(OverlapError::Empty("training corpus"));
    }
    if test.is_empty() {
        return Err(OverlapError::Empty("test tools"));
    }
    let index = NgramIndex::build(train, min_len);
    let leaked: Vec<LeakedTool> = test
        .par_iter()
        .filter_map(|(name, tokens)| {
            let c = index.contamination(tokens);
            let fraction = c.fraction();
            (fraction > tool_threshold).then(|| LeakedTool {
                name: name.clone(),
                evidence: Evidence::Ngram {
                    witness: c.witness.clone().unwrap_or_default().join(" "),
                    contaminated_tokens: c.count(),
                    total_tokens: tokens.len(),
                    fraction,
                },
            })
        })
        .collect();
    Ok(OverlapReport::new(
        OverlapMethod::Ngram,
        direction,
        test.len(),
        leaked,
        OverlapParams {
            min_ngram_len: Some(min_len),
            token_contamination_threshold: Some(tool_threshold),
            sim_threshold: None,
        },
    ))
}

/// Token sequences of a training corpus in dialogue JSONL form: every
/// message content, every tool-call argument blob, and each dialogue's tool
/// schemas in canonical JSON.
pub fn corpus_sequences(dialogues: &[Dialogue]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for d in dialogues {
        for m in &d.messages {
            out.push(tokenize(&m.content));
            out.extend(m.tool_calls.iter().map(|c| tokenize(&c.arguments)));
        }
        out.extend(d.tools.iter().map(|t| tokenize(&t.canonical_json())));
    }
    out.retain(|s| !s.is_empty());
    out
}

pub fn read_corpus(path: &Path) -> Result<Vec<Dialogue>, OverlapError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| OverlapError::Corpus {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn tool_sequences(tools: &[ToolSpec]) -> Vec<(String, Vec<String>)> {
    tools
        .iter()
        .map(|t| (t.name.clone(), tokenize(&t.canonical_json())))
        .collect()
}

pub fn ngram_overlap(
    train: &[Dialogue],
    test_tools: &ToolCatalog,
    min_len: usize,
    tool_threshold: f64,
) -> Result<OverlapReport, OverlapError> {
    if train.is_empty() {
        return Err(OverlapError::Empty("training corpus"));
    }
    ngram_overlap_tokens(
        &corpus_sequences(train),
        &tool_sequences(&test_tools.tools),
        min_len,
        tool_threshold,
        Direction {
            train: "corpus".into(),
            test: test_tools.source.clone(),
        },
    )
}

/// A test tool leaks when its whole-tool embedding has cosine above
/// `sim_threshold` with some training tool.
pub async fn similarity_overlap(
    train_tools: &ToolCatalog,
    test_tools: &ToolCatalog,
    provider: &dyn EmbeddingProvider,
    sim_threshold: f64,
) -> Result<OverlapReport, OverlapError> {
    let train: Vec<(String, String)> =
        train_tools.tools.iter().map(|t| (t.name.clone(), t.canonical_json())).collect();
    let test: Vec<(String, String)> =
        test_tools.tools.iter().map(|t| (t.name.clone(), t.canonical_json())).collect();
    let texts: Vec<String> = train.iter().chain(&test).map(|(_, s)| s.clone()).collect();
    let vectors = embedding::embed_texts(&texts, provider, None).await?;

    let mut leaked = Vec::new();
    for (name, text) in &test {
        let v = &vectors[text];
        let mut best: Option<(&str, f64)> = None;
        for (train_name, train_text) in &train {
            let c = embedding::cosine(v, &vectors[train_text])?;
            // Ties go to the first training tool in catalog order.
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((train_name, c));
            }
        }
        if let Some((matched, cosine)) = best {
            if cosine > sim_threshold {
                leaked.push(LeakedTool {
                    name: name.clone(),
                    evidence: Evidence::Similarity {
                        matched_tool: matched.to_string(),
                        cosine,
                    },
                });
            }
        }
    }
    Ok(OverlapReport::new(
        OverlapMethod::Similarity,
        Direction {
            train: train_tools.source.clone(),
            test: test_tools.source.clone(),
        },
        test.len(),
        leaked,
        OverlapParams {
            min_ngram_len: None,
            token_contamination_threshold: None,
            sim_threshold: Some(sim_threshold),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn words(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn dir() -> Direction {
        Direction {
            train: "train".into(),
            test: "test".into(),
        }
    }

    #[test]
    fn disjoint_vocabularies() {
        let r = ngram_overlap_tokens(&[words("a", 40)], &[("t".into(), words("b", 40))], 11, 0.1, dir()).unwrap();
        assert_eq!(r.leak_ratio, 0.0);
        assert!(r.leaked_tools.is_empty());
    }

    #[test]
    fn total_inclusion() {
        let tool = words("x", 30);
        let mut train = words("pre", 5);
        train.extend(tool.clone());
        train.extend(words("post", 5));
        let r = ngram_overlap_tokens(&[train], &[("t".into(), tool)], 11, 0.1, dir()).unwrap();
        assert_eq!(r.leak_ratio, 100.0);
        match &r.leaked_tools[0].evidence {
            Evidence::Ngram { fraction, .. } => assert_eq!(*fraction, 1.0),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn eleven_vs_ten_token_window() {
        let tool = words("x", 100);
        let train11 = tool[20..31].to_vec();
        let train10 = tool[20..30].to_vec();
        let r = ngram_overlap_tokens(&[train11], &[("t".into(), tool.clone())], 11, 0.1, dir()).unwrap();
        assert_eq!(r.leaked_names(), vec!["t"]);
        match &r.leaked_tools[0].evidence {
            Evidence::Ngram { contaminated_tokens, witness, .. } => {
                assert_eq!(*contaminated_tokens, 11);
                assert_eq!(witness, &tool[20..31].join(" "));
            }
            e => panic!("{e:?}"),
        }
        let r = ngram_overlap_tokens(&[train10], &[("t".into(), tool)], 11, 0.1, dir()).unwrap();
        assert!(r.leaked_tools.is_empty());
    }

    #[test]
    fn windows_do_not_cross_sequences() {
        let tool = words("x", 12);
        let train = vec![tool[..6].to_vec(), tool[6..].to_vec()];
        let c = NgramIndex::build(&train, 11).contamination(&tool);
        assert_eq!(c.count(), 0);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(ngram_overlap_tokens(&[], &[("t".into(), toks("a"))], 11, 0.1, dir()).is_err());
        assert!(ngram_overlap_tokens(&[toks("a b")], &[], 11, 0.1, dir()).is_err());
    }
}
