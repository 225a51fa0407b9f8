use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/synthetic")
        .join(name)
}

fn iquest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iquest"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn render_sparql_listing() {
    let o = iquest(&[
        "render-sparql",
        "--entity",
        "m.0bxtg",
        "--relation",
        "film.director.film",
        "--direction",
        "out",
    ]);
    assert!(o.status.success());
    assert_eq!(
        stdout(&o),
        "SELECT ?tailEntity\nWHERE {\n  ns:m.0bxtg ns:film.director.film ?tailEntity .\n}\n"
    );
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let o = iquest(&["render-sparql", "--entity", "m.x", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_direction_is_input_error() {
    let o = iquest(&["render-sparql", "--entity", "m.x", "--direction", "sideways"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn answer_happy_path_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.json");
    let o = iquest(&[
        "answer",
        "--question",
        "In which country was the director of Jaws born?",
        "--topic",
        "m.f_jaws",
        "--kg",
        s(&data("kg.tsv")),
        "--labels",
        s(&data("labels.tsv")),
        "--scorer",
        s(&data("scorer.json")),
        "--llm",
        &format!("scripted:{}", s(&data("transcripts/h3_jaws.json"))),
        "--trace",
        s(&trace),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), "United States of America\n");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(v["iterations"].as_array().unwrap().len(), 3);
    assert_eq!(v["llm_calls_by_role"]["iqg"], 3);
    assert_eq!(v["llm_calls_by_role"]["ae"], 4);

    let shown = iquest(&["trace-show", "--trace", s(&trace)]);
    assert!(shown.status.success());
    assert!(stdout(&shown).contains("final answer: United States of America"));
}

#[test]
fn exhausted_transcript_is_backend_failure_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("short.json");
    fs::write(
        &script,
        r#"{"iqg": [{"reply": "SUBQUESTION: Who directed Jaws?"}], "ae": []}"#,
    )
    .unwrap();
    let trace = dir.path().join("t.json");
    let o = iquest(&[
        "answer",
        "--question",
        "Who directed Jaws?",
        "--topic",
        "m.f_jaws",
        "--kg",
        s(&data("kg.tsv")),
        "--scorer",
        s(&data("scorer.json")),
        "--llm",
        &format!("scripted:{}", s(&script)),
        "--trace",
        s(&trace),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exhausted"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(v["stop_reason"], "error");
    assert!(v["final_answer"].is_null());
}

#[test]
fn missing_graph_is_input_error() {
    let o = iquest(&[
        "answer",
        "--question",
        "q",
        "--topic",
        "m.x",
        "--kg",
        "/nonexistent/kg.tsv",
        "--llm",
        "scripted:/nonexistent.json",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

fn run_eval(out: &Path, extra: &[&str]) -> Output {
    let owned: Vec<String> = [
        "eval".into(),
        "--dataset".into(),
        s(&data("dataset.jsonl")).into(),
        "--kg".into(),
        s(&data("kg.tsv")).into(),
        "--labels".into(),
        s(&data("labels.tsv")).into(),
        "--scorer".into(),
        s(&data("scorer.json")).into(),
        "--llm".into(),
        format!("scripted:{}", s(&data("transcripts"))),
        "--report".into(),
        s(&out.join("report.json")).into(),
        "--trace-dir".into(),
        s(&out.join("traces")).into(),
    ]
    .into_iter()
    .chain(extra.iter().map(|a| a.to_string()))
    .collect();
    let args: Vec<&str> = owned.iter().map(String::as_str).collect();
    iquest(&args)
}

#[test]
fn eval_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_eval(dir.path(), &["--parallel", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for key in ["n", "hit_at_1", "mean_llm_calls", "mean_runtime_s", "per_question"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["n"], 21);
    assert_eq!(v["hit_at_1"], 1.0);
    assert!(fs::read_to_string(dir.path().join("report.txt"))
        .unwrap()
        .contains("hit@1="));
    assert_eq!(fs::read_dir(dir.path().join("traces")).unwrap().count(), 21);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"max_iter": 1, "top_k": 2}"#).unwrap();
    // max_iter 1 cuts the 2-hop run short: the transcript's second sub-question goes unused.
    let o = run_eval(dir.path(), &["--config", s(&cfg)]);
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let row = v["per_question"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["id"] == "h2_jaws")
        .unwrap();
    assert_eq!(row["hit"], 0);

    let o = run_eval(dir.path(), &["--config", s(&cfg), "--max-iter", "5"]);
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["hit_at_1"], 1.0);

    fs::write(&cfg, r#"{"max_iters": 1}"#).unwrap();
    assert_eq!(run_eval(dir.path(), &["--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn train_scorer_writes_loadable_params() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.json");
    let o = iquest(&[
        "train-scorer",
        "--kg",
        s(&data("kg.tsv")),
        "--labels",
        s(&data("labels.tsv")),
        "--pairs",
        s(&data("pairs.jsonl")),
        "--encoder",
        "hash:32",
        "--gnn-dim",
        "8",
        "--mlp-dim",
        "8",
        "--epochs",
        "5",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["dims"]["d_in"], 32);
}
