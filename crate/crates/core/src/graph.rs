//! The tool relevance graph: an undirected edge joins two tools when some
//! parameter pair (P-P) or some return/parameter pair (P-R) has cosine
//! similarity strictly above `tau`. Subsets are sampled by a random walk
//! over those edges.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::catalog::ToolCatalog;
use crate::embedding::{self, parameter_key, return_key, EmbeddingError, EmbeddingStore, EmbeddingVector};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("tau must lie in (0, 1), got {0}")]
    TauOutOfRange(f64),
    #[error("no embedding for field `{0}`")]
    MissingEmbedding(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("cannot sample {requested} tools from a graph of {nodes}")]
    SampleTooLarge { requested: usize, nodes: usize },
    #[error("component too small: walk reached {reached} tools, {requested} requested")]
    ComponentTooSmall { reached: usize, requested: usize },
    #[error("graph was built for catalog {found}, expected {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed graph file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub tau: f64,
    pub include_pp: bool,
    pub include_pr: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            tau: 0.82,
            include_pp: true,
            include_pr: true,
        }
    }
}

impl GraphConfig {
    pub fn with_tau(tau: f64) -> Self {
        GraphConfig {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.tau > 0.0 && self.tau < 1.0 {
            Ok(())
        } else {
            Err(GraphError::TauOutOfRange(self.tau))
        }
    }
}

/// Which rule produced an edge between `i < j`. `PrIj` means a return
/// value of `i` matches a parameter of `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    #[serde(rename = "PP")]
    Pp,
    #[serde(rename = "PR_ij")]
    PrIj,
    #[serde(rename = "PR_ji")]
    PrJi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub kinds: BTreeSet<EdgeKind>,
    pub max_similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
    config: GraphConfig,
    catalog_digest: String,
}

struct ToolVectors<'a> {
    params: Vec<&'a EmbeddingVector>,
    returns: Vec<&'a EmbeddingVector>,
}

fn max_cosine(a: &[&EmbeddingVector], b: &[&EmbeddingVector]) -> Result<Option<f64>, EmbeddingError> {
    let mut best: Option<f64> = None;
    for x in a {
        for y in b {
            let c = embedding::cosine(x, y)?;
            best = Some(best.map_or(c, |m: f64| m.max(c)));
        }
    }
    Ok(best)
}

fn edge_between(
    i: usize,
    j: usize,
    a: &ToolVectors<'_>,
    b: &ToolVectors<'_>,
    config: &GraphConfig,
) -> Result<Option<Edge>, EmbeddingError> {
    let mut kinds = BTreeSet::new();
    let mut best = f64::NEG_INFINITY;
    let mut rule = |kind: EdgeKind, sim: Option<f64>| {
        if let Some(s) = sim {
            best = best.max(s);
            if s > config.tau {
                kinds.insert(kind);
            }
        }
    };
    if config.include_pp {
        rule(EdgeKind::Pp, max_cosine(&a.params, &b.params)?);
    }
    if config.include_pr {
        rule(EdgeKind::PrIj, max_cosine(&a.returns, &b.params)?);
        rule(EdgeKind::PrJi, max_cosine(&b.returns, &a.params)?);
    }
    Ok((!kinds.is_empty()).then_some(Edge {
        i,
        j,
        kinds,
        max_similarity: best,
    }))
}

impl ToolGraph {
    /// Assemble a graph from edges; used by `build_graph` and the file
    /// loader. Edges are sorted by `(i, j)`.
    pub fn from_edges(
        n_nodes: usize,
        mut edges: Vec<Edge>,
        config: GraphConfig,
        catalog_digest: impl Into<String>,
    ) -> Result<Self, GraphError> {
        config.validate()?;
        let mut adjacency = vec![Vec::new(); n_nodes];
        edges.sort_by_key(|e| (e.i, e.j));
        for w in edges.windows(2) {
            if (w[0].i, w[0].j) == (w[1].i, w[1].j) {
                return Err(GraphError::Malformed(format!("duplicate edge ({}, {})", w[0].i, w[0].j)));
            }
        }
        for e in &edges {
            if e.i >= e.j || e.j >= n_nodes {
                return Err(GraphError::Malformed(format!("bad edge ({}, {}) for {n_nodes} nodes", e.i, e.j)));
            }
            if e.kinds.is_empty() {
                return Err(GraphError::Malformed(format!("edge ({}, {}) has no kinds", e.i, e.j)));
            }
            adjacency[e.i].push(e.j);
            adjacency[e.j].push(e.i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(ToolGraph {
            n_nodes,
            edges,
            adjacency,
            config,
            catalog_digest: catalog_digest.into(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn catalog_digest(&self) -> &str {
        &self.catalog_digest
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|n| n.binary_search(&b).is_ok())
    }

    /// Whether the subgraph induced by `nodes` is connected.
    pub fn is_connected_subset(&self, nodes: &[usize]) -> bool {
        let Some(&first) = nodes.first() else {
            return true;
        };
        let members: BTreeSet<usize> = nodes.iter().copied().collect();
        let mut seen = BTreeSet::from([first]);
        let mut stack = vec![first];
        while let Some(u) = stack.pop() {
            for &v in self.neighbors(u) {
                if members.contains(&v) && seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        seen.len() == members.len()
    }
}

/// Build the graph by comparing every field pair of every tool pair.
pub fn build_graph(
    catalog: &ToolCatalog,
    store: &EmbeddingStore,
    config: &GraphConfig,
) -> Result<ToolGraph, GraphError> {
    config.validate()?;
    let lookup = |text: &str| store.get_text(text).ok_or_else(|| GraphError::MissingEmbedding(text.to_string()));
    let vectors = catalog
        .tools
        .iter()
        .map(|t| {
            Ok(ToolVectors {
                params: t
                    .parameters
                    .iter()
                    .map(|p| lookup(&parameter_key(p, t).text))
                    .collect::<Result<_, GraphError>>()?,
                returns: t
                    .returns
                    .iter()
                    .map(|r| lookup(&return_key(r, t).text))
                    .collect::<Result<_, GraphError>>()?,
            })
        })
        .collect::<Result<Vec<_>, GraphError>>()?;
    let n = vectors.len();
    let rows: Vec<Vec<Edge>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            for j in (i + 1)..n {
                if let Some(e) = edge_between(i, j, &vectors[i], &vectors[j], config)? {
                    row.push(e);
                }
            }
            Ok(row)
        })
        .collect::<Result<_, EmbeddingError>>()?;
    ToolGraph::from_edges(n, rows.into_iter().flatten().collect(), *config, catalog.digest())
}

/// Random walk collecting `n` distinct connected nodes, in visit order.
///
/// The walk starts at a uniformly chosen node (restricted to nodes with at
/// least one neighbor when `n > 1`) and repeatedly moves to a uniformly
/// chosen neighbor of the current node, adding it if unvisited. When the
/// current node has no unvisited neighbor the walk jumps to a uniformly
/// chosen visited node that still has one; when none exists the component
/// is exhausted.
pub fn sample_subset(graph: &ToolGraph, n: usize, seed: u64) -> Result<Vec<usize>, GraphError> {
    if n == 0 {
        return Err(GraphError::EmptySample);
    }
    if n > graph.n_nodes() {
        return Err(GraphError::SampleTooLarge {
            requested: n,
            nodes: graph.n_nodes(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n == 1 {
        return Ok(vec![rng.random_range(0..graph.n_nodes())]);
    }
    let starts: Vec<usize> = (0..graph.n_nodes()).filter(|&v| graph.degree(v) > 0).collect();
    if starts.is_empty() {
        return Err(GraphError::ComponentTooSmall {
            reached: 1,
            requested: n,
        });
    }
    let mut visited = vec![false; graph.n_nodes()];
    let start = starts[rng.random_range(0..starts.len())];
    visited[start] = true;
    let mut walk = vec![start];
    let mut current = start;
    let has_unvisited = |v: usize, visited: &[bool]| graph.neighbors(v).iter().any(|&u| !visited[u]);
    while walk.len() < n {
        if !has_unvisited(current, &visited) {
            let open: Vec<usize> = walk.iter().copied().filter(|&v| has_unvisited(v, &visited)).collect();
            if open.is_empty() {
                return Err(GraphError::ComponentTooSmall {
                    reached: walk.len(),
                    requested: n,
                });
            }
            current = open[rng.random_range(0..open.len())];
        }
        // Drawing among all neighbors until an unvisited one comes up is the
        // same distribution as drawing among unvisited neighbors directly.
        let fresh: Vec<usize> = graph.neighbors(current).iter().copied().filter(|&u| !visited[u]).collect();
        let next = fresh[rng.random_range(0..fresh.len())];
        visited[next] = true;
        walk.push(next);
        current = next;
    }
    Ok(walk)
}

/// `n` distinct nodes drawn uniformly, ignoring edges.
pub fn uniform_subset(n_nodes: usize, n: usize, seed: u64) -> Result<Vec<usize>, GraphError> {
    if n == 0 {
        return Err(GraphError::EmptySample);
    }
    if n > n_nodes {
        return Err(GraphError::SampleTooLarge {
            requested: n,
            nodes: n_nodes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n_nodes, n).into_vec())
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    catalog_digest: String,
    tau: f64,
    include_pp: bool,
    include_pr: bool,
    nodes: usize,
    edges: Vec<Edge>,
}

pub fn graph_to_json(graph: &ToolGraph) -> String {
    let file = GraphFile {
        catalog_digest: graph.catalog_digest.clone(),
        tau: graph.config.tau,
        include_pp: graph.config.include_pp,
        include_pr: graph.config.include_pr,
        nodes: graph.n_nodes,
        edges: graph.edges.clone(),
    };
    canonical::to_canonical_string(&file).expect("graph serializes")
}

pub fn graph_from_json(text: &str) -> Result<ToolGraph, GraphError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
    let config = GraphConfig {
        tau: file.tau,
        include_pp: file.include_pp,
        include_pr: file.include_pr,
    };
    ToolGraph::from_edges(file.nodes, file.edges, config, file.catalog_digest)
}

pub fn save_graph(graph: &ToolGraph, path: &Path) -> Result<(), GraphError> {
    let mut text = graph_to_json(graph);
    text.push('\n');
    std::fs::write(path, text).map_err(|e| GraphError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Load a graph file. With `expected_digest` set, a graph built for a
/// different catalog is refused unless `force` is true.
pub fn load_graph(path: &Path, expected_digest: Option<&str>, force: bool) -> Result<ToolGraph, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let graph = graph_from_json(&text)?;
    if let Some(expected) = expected_digest {
        if expected != graph.catalog_digest && !force {
            return Err(GraphError::DigestMismatch {
                expected: expected.to_string(),
                found: graph.catalog_digest.clone(),
            });
        }
    }
    Ok(graph)
}
