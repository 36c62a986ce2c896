use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toolflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toolflow")).args(args).output().unwrap()
}

fn travel() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/travel_tools.json")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "seed = 42\ndialogues = 4\ncatalog = {:?}\noutput_dir = \"out\"\n\n[metrics]\nrubric_sample = 2\n{extra}",
        travel().to_str().unwrap()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_succeeds_and_repeats_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let config = config.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = toolflow(&["run", "--config", config, "--output-dir", dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["data.jsonl", "filter_report.json", "metrics.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(toolflow(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(1));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "seed = \"forty-two\"\n").unwrap();
    assert_eq!(toolflow(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(1));

    // Reusing an output directory under a different seed.
    let config = write_config(tmp.path(), "");
    let config = config.to_str().unwrap();
    assert_eq!(toolflow(&["run", "--config", config]).status.code(), Some(0));
    let out = toolflow(&["run", "--config", config, "--seed", "7"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn attempt_cap_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "\n[agents]\nenforce_tool_schema = false\n\n[[backend.faults]]\nkind = \"unknown_tool\"\nevery = 1\n",
    );
    let out = toolflow(&["run", "--config", config.to_str().unwrap(), "--attempt-cap", "6"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_stats_reads_a_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    assert!(toolflow(&["run", "--config", config.to_str().unwrap()]).status.success());
    let data = tmp.path().join("out/data.jsonl");
    let report = tmp.path().join("stats.json");
    let out = toolflow(&["eval", "stats", "--in", data.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(printed, saved);
    assert!(printed["n_tokens"].as_u64().unwrap() > 0);
}
