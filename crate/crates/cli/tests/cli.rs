use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_persuasion"));
    c.env_remove("PERSUASION_CONFIG").env("RUST_LOG", "error");
    c
}

fn with_fixture(out: &Path) -> Command {
    let mut c = bin();
    c.arg("--config").arg(fixture("fixture.cfg")).args(["--provider", "mock", "--out"]).arg(out);
    c
}

fn run(c: &mut Command) -> Output {
    c.output().unwrap()
}

fn summary(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).expect("json summary on stderr");
    serde_json::from_str(line).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn select_from_score_fixture_keeps_twelve() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(with_fixture(tmp.path()).args(["select", "--scores"]).arg(fixture("feature_scores_overlap4.csv")));
    assert!(o.status.success());
    assert!(stdout(&o).contains("select: 12 questions"), "{}", stdout(&o));
    let sel: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("align/selection.json")).unwrap()).unwrap();
    assert_eq!(sel["selected"].as_array().unwrap().len(), 12);
}

#[test]
fn identify_without_repository_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(bin()
        .args(["--provider", "mock", "--out"])
        .arg(tmp.path())
        .arg("--corpus-paired")
        .arg(fixture("paired_corpus.jsonl"))
        .arg("identify"));
    assert_eq!(o.status.code(), Some(1));
    let s = summary(&o);
    assert_eq!(s["kind"], "usage");
    assert_eq!(s["command"], "identify");
    assert!(s["message"].as_str().unwrap().starts_with("missing input: HLQ repository"));
}

#[test]
fn exhausted_provider_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let script = tmp.path().join("fail.json");
    std::fs::write(&script, r#"{"rules":[{"template":"hlq_gen","status":500}]}"#).unwrap();
    let o = run(with_fixture(tmp.path())
        .arg("--provider-mock-script")
        .arg(&script)
        .args(["--provider-max-attempts", "2", "--provider-backoff-base-ms", "1", "gen-hlqs"]));
    assert_eq!(o.status.code(), Some(3));
    let s = summary(&o);
    assert_eq!(s["kind"], "provider");
    assert_eq!(s["exit_code"], 3);
    assert!(stdout(&o).contains("failures="));
}

#[test]
fn malformed_corpus_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"subject_id\": \"Q1\", \"setting\": \"en\"\n").unwrap();
    let o = run(with_fixture(tmp.path()).arg("--corpus-paired").arg(&bad).arg("translate"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(summary(&o)["kind"], "data");
}

#[test]
fn missing_credential_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("--config")
        .arg(fixture("fixture.cfg"))
        .arg("--out")
        .arg(tmp.path())
        .args(["--provider", "remote_chat", "--provider-api-key-env", "PERSUASION_TEST_NO_SUCH_KEY"])
        .env_remove("PERSUASION_TEST_NO_SUCH_KEY")
        .arg("translate"));
    assert_eq!(o.status.code(), Some(1));
    assert!(summary(&o)["message"].as_str().unwrap().contains("PERSUASION_TEST_NO_SUCH_KEY"));
}

#[test]
fn unknown_flag_is_usage_error_with_summary() {
    let o = run(bin().args(["run-all", "--no-such-flag"]));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(summary(&o)["kind"], "usage");
}

#[test]
fn help_exits_zero_and_lists_env_names() {
    let o = run(bin().args(["run-all", "--help"]));
    assert!(o.status.success());
    assert!(stdout(&o).contains("PERSUASION_PROVIDER_MAX_INFLIGHT"));
}

fn effective(out: &Path) -> toml::Value {
    toml::from_str(&std::fs::read_to_string(out.join("effective_config.toml")).unwrap()).unwrap()
}

#[test]
fn flag_beats_env_beats_file() {
    let dump = fixture("baseline_dump_conf.tsv");
    let tmp = tempfile::tempdir().unwrap();

    // file only: seed 17, max_inflight 8
    let o = run(with_fixture(tmp.path()).arg("baseline-sweep").arg("--dump").arg(&dump));
    assert!(o.status.success());
    let cfg = effective(tmp.path());
    assert_eq!(cfg["run"]["seed"].as_integer(), Some(17));
    assert_eq!(cfg["provider"]["max_inflight"].as_integer(), Some(8));

    let o = run(with_fixture(tmp.path())
        .env("PERSUASION_RUN_SEED", "5")
        .env("PERSUASION_PROVIDER_MAX_INFLIGHT", "2")
        .args(["--run-seed", "9", "baseline-sweep", "--dump"])
        .arg(&dump));
    assert!(o.status.success());
    let cfg = effective(tmp.path());
    assert_eq!(cfg["run"]["seed"].as_integer(), Some(9));
    assert_eq!(cfg["provider"]["max_inflight"].as_integer(), Some(2));
}

#[test]
fn bad_env_value_names_the_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(with_fixture(tmp.path()).env("PERSUASION_RUN_SEED", "many").arg("rank"));
    assert_eq!(o.status.code(), Some(1));
    assert!(summary(&o)["message"].as_str().unwrap().contains("PERSUASION_RUN_SEED"));
}

#[test]
fn sweep_replay_reports_best_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(with_fixture(tmp.path()).arg("baseline-sweep").arg("--dump").arg(fixture("baseline_dump_conf.tsv")));
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("x= 85 precision="), "{text}");
    assert!(text.contains("true_count=4264"));
    assert!(text.contains("best threshold: 85"));
    let csv = std::fs::read_to_string(tmp.path().join("baseline/sweep.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("85,") && l.contains(",0.608011,4264,1")), "{csv}");
}

#[test]
fn analysis_requires_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(with_fixture(tmp.path()).arg("rank"));
    assert_eq!(o.status.code(), Some(1));
    assert!(summary(&o)["message"].as_str().unwrap().starts_with("missing input"));
}
