//! End-to-end runs over the travel fixture with the simulated backend.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use toolflow_core::catalog::{load_catalog, save_catalog, LoadMode, ToolCatalog};
use toolflow_core::dialogue::{Dialogue, SamplingMethod};
use toolflow_core::filter::{FilterReport, Rule};
use toolflow_core::graph::load_graph;
use toolflow_core::mock::{FaultKind, PlantedFault};
use toolflow_core::pipeline::{
    ablate, read_attempts, run_pipeline, PipelineConfig, PipelineError, RunStatus, Switches, ATTEMPTS_FILE, DATA_FILE,
    FILTER_REPORT_FILE, GRAPH_FILE, MANIFEST_FILE, METRICS_FILE,
};

fn travel() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/travel_tools.json")
}

/// The travel catalog without its small components, so every walk of three
/// succeeds.
fn connected_catalog(dir: &Path) -> PathBuf {
    let full = load_catalog(&travel(), LoadMode::Strict).unwrap();
    let drop = ["translate_text", "detect_language", "get_random_joke"];
    let tools = full.tools.into_iter().filter(|t| !drop.contains(&t.name.as_str())).collect();
    let path = dir.join("connected.json");
    save_catalog(&ToolCatalog::from_tools(tools, "connected").unwrap(), &path).unwrap();
    path
}

fn config(catalog: PathBuf, out: PathBuf, dialogues: usize) -> PipelineConfig {
    let mut c = PipelineConfig {
        dialogues,
        catalog,
        output_dir: out,
        ..PipelineConfig::default()
    };
    c.planner.config.min_items = 3;
    c.planner.config.max_items = 6;
    c.metrics.rubric_sample = 2;
    c
}

fn read_dialogues(dir: &Path) -> Vec<Dialogue> {
    fs::read_to_string(dir.join(DATA_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn outputs(dir: &Path) -> [Vec<u8>; 3] {
    [DATA_FILE, FILTER_REPORT_FILE, METRICS_FILE].map(|f| fs::read(dir.join(f)).unwrap())
}

#[tokio::test]
async fn all_pass_run_keeps_every_attempt() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config(connected_catalog(tmp.path()), tmp.path().join("out"), 5);
    let m = run_pipeline(&c).await.unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!((m.attempts, m.kept, m.dropped), (5, 5, 0));
    let data = read_dialogues(&c.output_dir);
    assert_eq!(data.len(), 5);
    let ids: Vec<&str> = data.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["dlg-000000", "dlg-000001", "dlg-000002", "dlg-000003", "dlg-000004"]);
    for f in [MANIFEST_FILE, GRAPH_FILE, ATTEMPTS_FILE] {
        assert!(c.output_dir.join(f).exists(), "{f}");
    }
}

#[tokio::test]
async fn runs_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = config(travel(), tmp.path().join("a"), 8);
    let mut b = config(travel(), tmp.path().join("b"), 8);
    b.workers = 1;
    run_pipeline(&a).await.unwrap();
    run_pipeline(&b).await.unwrap();
    assert_eq!(outputs(&a.output_dir), outputs(&b.output_dir));
    assert_eq!(
        fs::read(a.output_dir.join(ATTEMPTS_FILE)).unwrap(),
        fs::read(b.output_dir.join(ATTEMPTS_FILE)).unwrap()
    );
}

#[tokio::test]
async fn resume_after_interruption_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = config(travel(), tmp.path().join("full"), 8);
    run_pipeline(&full).await.unwrap();

    // What a run killed while writing its fourth attempt leaves behind.
    let cut = config(travel(), tmp.path().join("cut"), 8);
    fs::create_dir_all(&cut.output_dir).unwrap();
    let attempts = fs::read_to_string(full.output_dir.join(ATTEMPTS_FILE)).unwrap();
    let lines: Vec<&str> = attempts.lines().collect();
    let torn = format!("{}\n{}", lines[..3].join("\n"), &lines[3][..lines[3].len() / 2]);
    fs::write(cut.output_dir.join(ATTEMPTS_FILE), torn).unwrap();
    fs::copy(full.output_dir.join(MANIFEST_FILE), cut.output_dir.join(MANIFEST_FILE)).unwrap();

    let m = run_pipeline(&cut).await.unwrap();
    assert_eq!(m.resumed_from, 3);
    assert_eq!(outputs(&full.output_dir), outputs(&cut.output_dir));
    assert_eq!(fs::read_to_string(cut.output_dir.join(ATTEMPTS_FILE)).unwrap(), attempts);

    // A finished run resumes to itself without new attempts.
    let again = run_pipeline(&cut).await.unwrap();
    assert_eq!(again.resumed_from, m.attempts);
    assert_eq!(outputs(&full.output_dir), outputs(&cut.output_dir));
}

#[tokio::test]
async fn changed_config_refuses_to_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config(travel(), tmp.path().join("out"), 2);
    run_pipeline(&c).await.unwrap();
    c.seed = 7;
    let err = run_pipeline(&c).await.unwrap_err();
    assert!(matches!(err, PipelineError::ResumeMismatch { .. }), "{err}");
    assert_eq!(err.exit_code(), 1);
    // Worker count is not part of the identity.
    c.seed = 42;
    c.workers = 2;
    run_pipeline(&c).await.unwrap();
}

#[tokio::test]
async fn planted_unknown_tool_calls_cost_two_attempts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config(connected_catalog(tmp.path()), tmp.path().join("out"), 8);
    c.agents.enforce_tool_schema = false;
    c.backend.faults = vec![PlantedFault {
        kind: FaultKind::UnknownTool,
        every: 5,
        offset: 0,
    }];
    let m = run_pipeline(&c).await.unwrap();
    assert_eq!((m.attempts, m.kept, m.dropped), (10, 8, 2));
    let report: FilterReport =
        serde_json::from_str(&fs::read_to_string(c.output_dir.join(FILTER_REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report.dropped, 2);
    assert_eq!(report.reasons.get(&Rule::R1), Some(&2));
    let dropped: Vec<&str> = report.verdicts.iter().filter(|v| !v.kept).map(|v| v.id.as_str()).collect();
    assert_eq!(dropped, ["dlg-000000", "dlg-000005"]);
}

#[tokio::test]
async fn attempt_cap_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config(connected_catalog(tmp.path()), tmp.path().join("out"), 4);
    c.agents.enforce_tool_schema = false;
    c.attempt_cap = Some(5);
    c.backend.faults = vec![PlantedFault {
        kind: FaultKind::UnknownTool,
        every: 2,
        offset: 0,
    }];
    let err = run_pipeline(&c).await.unwrap_err();
    assert!(matches!(err, PipelineError::AttemptCap { cap: 5, kept: 2, target: 4 }), "{err}");
    assert_eq!(err.exit_code(), 3);
    // Partial outputs are still written.
    assert_eq!(read_dialogues(&c.output_dir).len(), 2);
    assert_eq!(read_attempts(&c.output_dir.join(ATTEMPTS_FILE)).unwrap().len(), 5);
}

#[tokio::test]
async fn ablation_provenance_follows_switches() {
    let tmp = tempfile::tempdir().unwrap();
    let base = config(travel(), tmp.path().join("ablate"), 6);
    let catalog = load_catalog(&travel(), LoadMode::Strict).unwrap();
    for switches in Switches::MATRIX {
        let m = ablate(&base, switches).await.unwrap();
        assert_eq!(m.switches, switches);
        let dir = base.output_dir.join(switches.label());
        let data = read_dialogues(&dir);
        assert_eq!(data.len(), 6);
        let graph = switches.graph.then(|| load_graph(&dir.join(GRAPH_FILE), Some(&catalog.digest()), false).unwrap());
        for d in &data {
            assert_eq!(d.provenance.plan_enabled, switches.plan);
            assert_eq!(d.plan.is_some(), switches.plan);
            let sampling = d.provenance.sampling.as_ref().unwrap();
            let expected = if switches.graph {
                SamplingMethod::GraphWalk
            } else {
                SamplingMethod::Uniform
            };
            assert_eq!(sampling.method, expected);
            assert_eq!(sampling.nodes.iter().collect::<BTreeSet<_>>().len(), 3);
            let names: Vec<&str> = sampling.nodes.iter().map(|&i| catalog.tools[i].name.as_str()).collect();
            let tools: Vec<&str> = d.tools.iter().map(|t| t.name.as_str()).collect();
            assert_eq!(names, tools);
            if let Some(g) = &graph {
                assert!(g.is_connected_subset(&sampling.nodes), "{}", d.id);
            }
        }
        assert_eq!(dir.join(GRAPH_FILE).exists(), switches.graph);
    }
}

#[tokio::test]
async fn uniform_sampling_ignores_disconnection() {
    // Three tools with no shared fields: no edges at all.
    let tmp = tempfile::tempdir().unwrap();
    let full = load_catalog(&travel(), LoadMode::Strict).unwrap();
    let keep = ["get_random_joke", "translate_text", "get_weather"];
    let tools = full.tools.into_iter().filter(|t| keep.contains(&t.name.as_str())).collect();
    let path = tmp.path().join("islands.json");
    save_catalog(&ToolCatalog::from_tools(tools, "islands").unwrap(), &path).unwrap();

    let mut c = config(path, tmp.path().join("out"), 2);
    c.subset_size = 2;
    c.attempt_cap = Some(3);
    let m = ablate(&c, Switches { graph: false, plan: true }).await.unwrap();
    assert_eq!(m.status, RunStatus::Complete);

    let err = ablate(&c, Switches { graph: true, plan: true }).await.unwrap_err();
    assert!(matches!(err, PipelineError::AttemptCap { kept: 0, .. }), "{err}");
}
