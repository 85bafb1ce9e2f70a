use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::AtomicBool;

use zsl_kep_cli::{run_cli, EXIT_DEGRADED, EXIT_ERROR, EXIT_INTERRUPTED, EXIT_OK};
use zsl_kep_core::corpus::read_predictions;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic")
}

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn cli(args: &[&str]) -> Run {
    cli_with_cancel(args, false)
}

fn cli_with_cancel(args: &[&str], cancelled: bool) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("zsl-kep").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err, &AtomicBool::new(cancelled));
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Copies the fixture, keeping only the first `n` claims.
fn trimmed_fixture(dir: &Path, n: usize) -> PathBuf {
    let claims: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(fixture().join("claims.json")).unwrap()).unwrap();
    std::fs::write(dir.join("claims.json"), serde_json::to_string(&claims[..n]).unwrap()).unwrap();
    let config = format!(
        "claims_path = \"claims.json\"\nstore_dir = {:?}\nbackend = \"mock\"\nmock_script_path = {:?}\n",
        fixture().join("stores"),
        fixture().join("mock_script.json"),
    );
    let config_path = dir.join("run.toml");
    std::fs::write(&config_path, config).unwrap();
    config_path
}

#[test]
fn two_claim_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = trimmed_fixture(dir.path(), 2);
    let output = dir.path().join("pred.json");
    let r = cli(&["run", "--config", path(&config), "--output", path(&output)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.is_empty());
    assert!(r.err.contains("claims processed: 2/2"), "{}", r.err);
    assert_eq!(read_predictions(&output).unwrap().len(), 2);
}

#[test]
fn missing_store_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = trimmed_fixture(dir.path(), 2);
    let stores = dir.path().join("stores");
    std::fs::create_dir(&stores).unwrap();
    std::fs::copy(fixture().join("stores/0.json"), stores.join("0.json")).unwrap();
    let output = dir.path().join("pred.json");
    let r = cli(&[
        "run",
        "--config",
        path(&config),
        "--store-dir",
        path(&stores),
        "--output",
        path(&output),
    ]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains(&format!("{}", stores.join("1.json").display())), "{}", r.err);
    assert!(!output.exists());
}

#[test]
fn truncate_above_top_k_is_rejected() {
    let config = fixture().join("run.toml");
    let r = cli(&["run", "--config", path(&config), "--output", "/nonexistent/x.json", "--truncate-claim", "80"]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("truncate_claim") && r.err.contains("claim_top_k"), "{}", r.err);
}

#[test]
fn http_backend_requires_url_and_model() {
    let config = fixture().join("run.toml");
    let r = cli(&["run", "--config", path(&config), "--output", "/tmp/unused.json", "--backend", "http"]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("base_url"), "{}", r.err);
}

#[test]
fn print_config_shows_defaults() {
    let r = cli(&["run", "--print-config"]);
    assert_eq!(r.code, EXIT_OK);
    for line in [
        "claim_top_k = 70",
        "keypoint_top_k = 12",
        "truncate_claim = 55",
        "truncate_keypoint = 9",
        "k1 = 1.2",
        "b = 0.75",
        "temperature = 0.0",
        "top_p = 0.8",
        "max_tokens_keypoints = 512",
        "max_tokens_prediction = 1024",
        "workers = 4",
    ] {
        assert!(r.out.contains(line), "missing {line}:\n{}", r.out);
    }
    let r = cli(&["run", "--print-config", "--workers", "7"]);
    assert!(r.out.contains("workers = 7"));
}

#[test]
fn failed_prediction_exits_degraded() {
    let dir = tempfile::tempdir().unwrap();
    let config = trimmed_fixture(dir.path(), 1);
    let script = dir.path().join("script.json");
    std::fs::write(
        &script,
        r#"[["PRIMITIVE:\n1. dam output\nCOMBINED:\n", {"error": "transport", "detail": "connection refused"}]]"#,
    )
    .unwrap();
    let output = dir.path().join("pred.json");
    let r = cli(&[
        "run",
        "--config",
        path(&config),
        "--mock-script",
        path(&script),
        "--output",
        path(&output),
    ]);
    assert_eq!(r.code, EXIT_DEGRADED, "{}", r.err);
    assert!(r.err.contains("failed predictions: 1"));
    let reports = read_predictions(&output).unwrap();
    assert_eq!(reports[0].verdict.as_str(), "Not Enough Evidence");
}

#[test]
fn cancelled_run_writes_what_finished() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("pred.json");
    let config = fixture().join("run.toml");
    let r = cli_with_cancel(&["run", "--config", path(&config), "--output", path(&output)], true);
    assert_eq!(r.code, EXIT_INTERRUPTED);
    assert!(r.err.contains("interrupted"));
    assert_eq!(read_predictions(&output).unwrap().len(), 0);
}

#[test]
fn score_prints_aggregates_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.json");
    let config = fixture().join("run.toml");
    assert_eq!(cli(&["run", "--config", path(&config), "--output", path(&pred)]).code, EXIT_OK);
    let gold = fixture().join("gold.json");
    let r = cli(&["score", "--pred", path(&pred), "--gold", path(&gold)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    for key in ["q_only=", "q_plus_a=", "averitec="] {
        let line = r.err.lines().find(|l| l.starts_with(key)).unwrap();
        let value = &line[key.len()..];
        assert_eq!(value.split('.').nth(1).unwrap().len(), 4, "{line}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pred.scores.json")).unwrap()).unwrap();
    assert_eq!(report["per_claim"].as_array().unwrap().len(), 4);
    assert_eq!(report["metadata"]["gamma"], 0.5);
    assert_eq!(report["metadata"]["stemming"], false);

    let custom = dir.path().join("custom.json");
    let r = cli(&["score", "--pred", path(&pred), "--gold", path(&gold), "--stemming", "--report", path(&custom)]);
    assert_eq!(r.code, EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(custom).unwrap()).unwrap();
    assert_eq!(report["metadata"]["stemming"], true);
}

#[test]
fn score_rejects_blind_or_mismatched_gold() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.json");
    let config = fixture().join("run.toml");
    cli(&["run", "--config", path(&config), "--output", path(&pred)]);
    // the claims file has no labels
    let r = cli(&["score", "--pred", path(&pred), "--gold", path(&fixture().join("claims.json"))]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("no gold annotation"), "{}", r.err);

    let gold: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(fixture().join("gold.json")).unwrap()).unwrap();
    let shifted = dir.path().join("shifted.json");
    std::fs::write(&shifted, serde_json::to_string(&gold[1..]).unwrap()).unwrap();
    let r = cli(&["score", "--pred", path(&pred), "--gold", path(&shifted)]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("does not match"), "{}", r.err);
}

#[test]
fn inspect_prints_tagged_retrieval() {
    let config = fixture().join("run.toml");
    let r = cli(&["inspect", "--config", path(&config), "--claim", "1"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("key points (mock backend):"));
    assert!(r.out.contains("groups: 4 (3 key points + claim)"), "{}", r.out);
    assert!(r.out.contains("<0_0>"));
}

#[test]
fn inspect_without_llm_uses_claim_only() {
    let config = fixture().join("run.toml");
    let r = cli(&["inspect", "--config", path(&config), "--claim", "2", "--no-llm", "--backend", "http"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("not requested (--no-llm)"));
    assert!(r.out.contains("Claim: The Northfield school district"));
    assert!(r.out.contains("groups: 1 (0 key points + claim)"));
    assert!(r.out.contains("group 1/1 claim cap=70"));
}

#[test]
fn inspect_unknown_claim() {
    let config = fixture().join("run.toml");
    let r = cli(&["inspect", "--config", path(&config), "--claim", "9"]);
    assert_eq!(r.code, EXIT_ERROR);
    assert!(r.err.contains("unknown claim id 9"), "{}", r.err);
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(cli(&["frobnicate"]).code, EXIT_ERROR);
    assert_eq!(cli(&["score", "--pred", "x.json"]).code, EXIT_ERROR);
    let help = cli(&["--help"]);
    assert_eq!(help.code, EXIT_OK);
    assert!(help.out.contains("inspect"));
}

#[test]
fn binary_runs_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("pred.json");
    let status = Command::new(env!("CARGO_BIN_EXE_zsl-kep"))
        .args(["run", "--config", path(&fixture().join("run.toml")), "--output", path(&output)])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(status.stdout.is_empty());
    assert_eq!(read_predictions(&output).unwrap().len(), 4);
}
