use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use toolflow_core::catalog::{ParameterSpec, ReturnSpec, ToolCatalog, ToolSpec, ValueType};
use toolflow_core::embedding::{tool_keys, EmbeddingStore, EmbeddingVector, FieldKind};
use toolflow_core::graph::{
    build_graph, load_graph, sample_subset, save_graph, Edge, EdgeKind, GraphConfig, GraphError, ToolGraph,
};

struct Fixture {
    catalog: ToolCatalog,
    store: EmbeddingStore,
    raw: HashMap<String, Vec<f64>>,
}

fn param(name: &str, description: &str) -> ParameterSpec {
    ParameterSpec {
        name: name.into(),
        description: description.into(),
        value_type: ValueType::String,
        required: true,
        extra: BTreeMap::new(),
    }
}

fn ret(name: &str, description: &str) -> ReturnSpec {
    ReturnSpec {
        name: name.into(),
        description: description.into(),
        value_type: ValueType::String,
        extra: BTreeMap::new(),
    }
}

/// Random catalog with low-dimensional random vectors, so plenty of field
/// pairs land on both sides of common thresholds.
fn random_fixture(seed: u64, max_tools: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tools = rng.random_range(1..=max_tools);
    let mut tools = Vec::new();
    for t in 0..n_tools {
        let n_params = rng.random_range(0..=3);
        let n_returns = rng.random_range(0..=2);
        tools.push(ToolSpec {
            name: format!("tool_{t}"),
            description: format!("tool number {t}"),
            parameters: (0..n_params).map(|k| param(&format!("p{k}"), &format!("param {k} of {t}"))).collect(),
            returns: (0..n_returns).map(|k| ret(&format!("r{k}"), &format!("result {k} of {t}"))).collect(),
        });
    }
    let catalog = ToolCatalog::from_tools(tools, "random").unwrap();
    let keys: Vec<_> = catalog.tools.iter().flat_map(tool_keys).collect();
    let mut raw = HashMap::new();
    for k in &keys {
        let v: Vec<f64> = loop {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            if v.iter().any(|x: &f64| x.abs() > 1e-3) {
                break v;
            }
        };
        raw.insert(k.text.clone(), v);
    }
    let vectors = raw
        .iter()
        .map(|(t, v)| (t.clone(), EmbeddingVector::new(v.clone()).unwrap()))
        .collect();
    Fixture {
        catalog,
        store: EmbeddingStore::from_parts(keys, vectors),
        raw,
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Every ordered tool pair, every field pair, threshold applied literally.
fn brute_force(f: &Fixture, config: &GraphConfig) -> BTreeMap<(usize, usize), BTreeSet<EdgeKind>> {
    let fields = |t: &ToolSpec, kind: FieldKind| -> Vec<Vec<f64>> {
        tool_keys(t)
            .into_iter()
            .filter(|k| k.kind == kind)
            .map(|k| f.raw[&k.text].clone())
            .collect()
    };
    let mut out: BTreeMap<(usize, usize), BTreeSet<EdgeKind>> = BTreeMap::new();
    let tools = &f.catalog.tools;
    for i in 0..tools.len() {
        for j in 0..tools.len() {
            if i == j {
                continue;
            }
            let pi = fields(&tools[i], FieldKind::Parameter);
            let pj = fields(&tools[j], FieldKind::Parameter);
            let ri = fields(&tools[i], FieldKind::Return);
            let (lo, hi) = (i.min(j), i.max(j));
            let mut add = |kind| {
                out.entry((lo, hi)).or_default().insert(kind);
            };
            if config.include_pp && pi.iter().any(|a| pj.iter().any(|b| cos(a, b) > config.tau)) {
                add(EdgeKind::Pp);
            }
            // A return of i feeding a parameter of j.
            if config.include_pr && ri.iter().any(|a| pj.iter().any(|b| cos(a, b) > config.tau)) {
                add(if i < j { EdgeKind::PrIj } else { EdgeKind::PrJi });
            }
        }
    }
    out
}

fn edge_map(g: &ToolGraph) -> BTreeMap<(usize, usize), BTreeSet<EdgeKind>> {
    g.edges().iter().map(|e| ((e.i, e.j), e.kinds.clone())).collect()
}

#[test]
fn build_matches_brute_force_on_random_catalogs() {
    for seed in 0..20 {
        let f = random_fixture(seed, 50);
        for config in [
            GraphConfig::default(),
            GraphConfig::with_tau(0.5),
            GraphConfig {
                include_pr: false,
                ..GraphConfig::default()
            },
            GraphConfig {
                include_pp: false,
                ..GraphConfig::default()
            },
        ] {
            let g = build_graph(&f.catalog, &f.store, &config).unwrap();
            assert_eq!(edge_map(&g), brute_force(&f, &config), "seed {seed}, {config:?}");
            for e in g.edges() {
                assert!(e.max_similarity > config.tau);
            }
        }
    }
}

#[test]
fn shared_location_parameter_gives_pp_edge() {
    let tools = vec![
        ToolSpec {
            name: "get_weather".into(),
            description: "Weather for a place".into(),
            parameters: vec![param("location", "city")],
            returns: vec![ret("forecast", "text")],
        },
        ToolSpec {
            name: "book_flight".into(),
            description: "Book a flight".into(),
            parameters: vec![param("destination", "city")],
            returns: vec![ret("ticket", "id")],
        },
    ];
    let catalog = ToolCatalog::from_tools(tools, "pair").unwrap();
    let keys: Vec<_> = catalog.tools.iter().flat_map(tool_keys).collect();
    let table: HashMap<&str, Vec<f64>> = HashMap::from([
        ("location: city", vec![1.0, 0.1, 0.0]),
        ("destination: city", vec![1.0, 0.0, 0.1]),
        ("forecast: text", vec![0.0, 1.0, 0.0]),
        ("ticket: id", vec![0.0, 0.0, 1.0]),
    ]);
    let vectors = table
        .iter()
        .map(|(t, v)| (t.to_string(), EmbeddingVector::new(v.clone()).unwrap()))
        .collect();
    let store = EmbeddingStore::from_parts(keys, vectors);
    let g = build_graph(&catalog, &store, &GraphConfig::default()).unwrap();
    assert_eq!(g.edges().len(), 1);
    assert_eq!(g.edges()[0].kinds, BTreeSet::from([EdgeKind::Pp]));
}

#[test]
fn single_tool_has_no_edges() {
    let f = random_fixture(7, 1);
    let g = build_graph(&f.catalog, &f.store, &GraphConfig::default()).unwrap();
    assert_eq!(g.n_nodes(), 1);
    assert!(g.edges().is_empty());
}

#[test]
fn missing_embedding_is_an_error() {
    let f = random_fixture(3, 10);
    let empty = EmbeddingStore::from_parts(Vec::new(), HashMap::new());
    if f.catalog.tools.iter().any(|t| !t.parameters.is_empty() || !t.returns.is_empty()) {
        assert!(matches!(
            build_graph(&f.catalog, &empty, &GraphConfig::default()),
            Err(GraphError::MissingEmbedding(_))
        ));
    }
}

#[test]
fn tau_out_of_range_rejected() {
    let f = random_fixture(1, 5);
    for tau in [0.0, 1.0, -0.2, 1.5] {
        assert!(matches!(
            build_graph(&f.catalog, &f.store, &GraphConfig::with_tau(tau)),
            Err(GraphError::TauOutOfRange(_))
        ));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn edges_shrink_as_tau_grows(seed in any::<u64>(), a in 0.05f64..0.95, b in 0.05f64..0.95) {
        let f = random_fixture(seed, 20);
        let (lo, hi) = (a.min(b), a.max(b));
        let loose = edge_map(&build_graph(&f.catalog, &f.store, &GraphConfig::with_tau(lo)).unwrap());
        let strict = edge_map(&build_graph(&f.catalog, &f.store, &GraphConfig::with_tau(hi)).unwrap());
        for (pair, kinds) in &strict {
            let outer = loose.get(pair);
            prop_assert!(outer.is_some());
            prop_assert!(kinds.is_subset(outer.unwrap()));
        }
    }

    #[test]
    fn adjacency_is_symmetric(seed in any::<u64>()) {
        let f = random_fixture(seed, 20);
        let g = build_graph(&f.catalog, &f.store, &GraphConfig::with_tau(0.6)).unwrap();
        for a in 0..g.n_nodes() {
            prop_assert!(!g.has_edge(a, a));
            for b in 0..g.n_nodes() {
                prop_assert_eq!(g.has_edge(a, b), g.has_edge(b, a));
            }
        }
    }

    #[test]
    fn samples_are_connected_distinct_and_deterministic(seed in any::<u64>(), n in 1usize..6) {
        let f = random_fixture(seed, 15);
        let g = build_graph(&f.catalog, &f.store, &GraphConfig::with_tau(0.5)).unwrap();
        prop_assume!(n <= g.n_nodes());
        match sample_subset(&g, n, seed) {
            Ok(walk) => {
                prop_assert_eq!(walk.len(), n);
                prop_assert_eq!(walk.iter().collect::<BTreeSet<_>>().len(), n);
                prop_assert!(g.is_connected_subset(&walk));
                // Each node after the first joins through an edge to some
                // earlier node: the last one, or a jump target.
                for k in 1..walk.len() {
                    prop_assert!(walk[..k].iter().any(|&u| g.has_edge(u, walk[k])));
                }
                prop_assert_eq!(sample_subset(&g, n, seed).unwrap(), walk);
            }
            Err(GraphError::ComponentTooSmall { reached, requested }) => {
                prop_assert!(reached < requested);
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

fn graph(n: usize, pairs: &[(usize, usize)]) -> ToolGraph {
    let edges = pairs
        .iter()
        .map(|&(i, j)| Edge {
            i,
            j,
            kinds: BTreeSet::from([EdgeKind::Pp]),
            max_similarity: 0.9,
        })
        .collect();
    ToolGraph::from_edges(n, edges, GraphConfig::default(), "digest").unwrap()
}

#[test]
fn path_graph_yields_every_node() {
    let g = graph(3, &[(0, 1), (1, 2)]);
    for seed in 0..50 {
        let mut walk = sample_subset(&g, 3, seed).unwrap();
        walk.sort();
        assert_eq!(walk, vec![0, 1, 2]);
    }
}

#[test]
fn star_needs_dead_end_jumps() {
    // From any leaf the walk must jump back to the hub to continue.
    let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
    for seed in 0..50 {
        let walk = sample_subset(&g, 5, seed).unwrap();
        assert_eq!(walk.iter().collect::<BTreeSet<_>>().len(), 5);
    }
}

#[test]
fn small_component_reports_reached_size() {
    let g = graph(5, &[(0, 1), (2, 3)]);
    for seed in 0..20 {
        assert!(matches!(
            sample_subset(&g, 3, seed),
            Err(GraphError::ComponentTooSmall { reached: 2, requested: 3 })
        ));
    }
    assert!(matches!(sample_subset(&g, 6, 0), Err(GraphError::SampleTooLarge { .. })));
    assert!(matches!(sample_subset(&g, 0, 0), Err(GraphError::EmptySample)));
}

#[test]
fn single_node_sample_is_roughly_uniform() {
    let g = graph(4, &[]);
    let mut counts = [0usize; 4];
    for seed in 0..4000 {
        counts[sample_subset(&g, 1, seed).unwrap()[0]] += 1;
    }
    assert!(counts.iter().all(|&c| c > 850), "{counts:?}");
}

/// Literal step-by-step walk: redraw from the last added node until an
/// unvisited neighbor comes up, jumping when the node is a dead end.
fn reference_walk(adj: &[Vec<usize>], n: usize, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let starts: Vec<usize> = (0..adj.len()).filter(|&v| !adj[v].is_empty()).collect();
    let mut visited = vec![starts[rng.random_range(0..starts.len())]];
    let mut current = visited[0];
    while visited.len() < n {
        let open = |v: usize, visited: &[usize]| adj[v].iter().any(|u| !visited.contains(u));
        if !open(current, &visited) {
            let candidates: Vec<usize> = visited.iter().copied().filter(|&v| open(v, &visited)).collect();
            current = candidates[rng.random_range(0..candidates.len())];
        }
        let next = adj[current][rng.random_range(0..adj[current].len())];
        if !visited.contains(&next) {
            visited.push(next);
            current = next;
        }
    }
    visited.into_iter().collect()
}

#[test]
fn sampler_matches_reference_walker() {
    // Triangle a-b-c with pendant d on a.
    let g = graph(4, &[(0, 1), (0, 2), (1, 2), (0, 3)]);
    let adj: Vec<Vec<usize>> = (0..4).map(|v| g.neighbors(v).to_vec()).collect();
    let draws = 10_000;
    let mut ours: BTreeMap<BTreeSet<usize>, f64> = BTreeMap::new();
    let mut theirs: BTreeMap<BTreeSet<usize>, f64> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    for seed in 0..draws {
        let walk = sample_subset(&g, 3, seed).unwrap();
        assert!(g.is_connected_subset(&walk));
        let set: BTreeSet<usize> = walk.into_iter().collect();
        assert_eq!(set.len(), 3);
        *ours.entry(set).or_default() += 1.0;
        *theirs.entry(reference_walk(&adj, 3, &mut rng)).or_default() += 1.0;
    }
    let cells: BTreeSet<_> = ours.keys().chain(theirs.keys()).cloned().collect();
    let mut stat = 0.0;
    for c in &cells {
        let (a, b) = (ours.get(c).copied().unwrap_or(0.0), theirs.get(c).copied().unwrap_or(0.0));
        let expected = (a + b) / 2.0;
        stat += (a - expected).powi(2) / expected + (b - expected).powi(2) / expected;
    }
    let p = 1.0 - ChiSquared::new((cells.len() - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 {stat}, p {p}, ours {ours:?}, reference {theirs:?}");
}

#[test]
fn graph_file_round_trip_and_digest_check() {
    let dir = tempfile::tempdir().unwrap();
    let f = random_fixture(11, 12);
    let g = build_graph(&f.catalog, &f.store, &GraphConfig::with_tau(0.6)).unwrap();
    let path = dir.path().join("graph.json");
    save_graph(&g, &path).unwrap();
    assert_eq!(load_graph(&path, Some(&f.catalog.digest()), false).unwrap(), g);
    assert!(matches!(
        load_graph(&path, Some("0000"), false),
        Err(GraphError::DigestMismatch { .. })
    ));
    assert_eq!(load_graph(&path, Some("0000"), true).unwrap(), g);

    let empty = graph(3, &[]);
    save_graph(&empty, &path).unwrap();
    assert_eq!(load_graph(&path, None, false).unwrap(), empty);

    std::fs::write(&path, "{\"nodes\": 2}").unwrap();
    assert!(matches!(load_graph(&path, None, false), Err(GraphError::Malformed(_))));
}
