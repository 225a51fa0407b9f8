//! Datasets, Hit@1 and batch evaluation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, GraphView};
use crate::par::map_ordered_bounded;
use crate::pipeline::{canonical_json, write_trace, Engine};
use crate::reasoning::{ChatClient, LlmError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub topic_entity: EntityId,
    /// Acceptable surface forms; never empty.
    pub answers: Vec<String>,
}

/// Reads a JSON-Lines dataset. Blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |line, reason: String| DatasetError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(raw).map_err(|e| malformed(line, e.to_string()))?;
        if rec.answers.is_empty() {
            return Err(malformed(line, "field `answers` must not be empty".into()));
        }
        if rec.id.is_empty() {
            return Err(malformed(line, "field `id` must not be empty".into()));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: rec.id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Trim, drop one trailing period, strip surrounding quotes, collapse
/// whitespace, lowercase.
pub fn normalize(s: &str) -> String {
    let mut t = s.trim();
    t = t.strip_suffix('.').unwrap_or(t).trim_end();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')] {
        if t.len() >= open.len_utf8() + close.len_utf8() && t.starts_with(open) && t.ends_with(close) {
            t = t[open.len_utf8()..t.len() - close.len_utf8()].trim();
            break;
        }
    }
    t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn hit_at_1(predicted: &str, golds: &[String]) -> u8 {
    let p = normalize(predicted);
    u8::from(golds.iter().any(|g| normalize(g) == p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    /// Empty when the run failed.
    pub predicted: String,
    pub hit: u8,
    pub calls: u64,
    pub runtime_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub hit_at_1: f64,
    pub mean_llm_calls: f64,
    pub mean_runtime_s: f64,
    pub per_question: Vec<QuestionResult>,
}

impl EvalReport {
    /// Aggregates rows; zero rows give zero means.
    pub fn from_rows(per_question: Vec<QuestionResult>) -> Self {
        let n = per_question.len();
        let mean = |sum: f64| if n == 0 { 0.0 } else { sum / n as f64 };
        Self {
            n,
            hit_at_1: mean(per_question.iter().map(|r| f64::from(r.hit)).sum()),
            mean_llm_calls: mean(per_question.iter().map(|r| r.calls as f64).sum()),
            mean_runtime_s: mean(per_question.iter().map(|r| r.runtime_s).sum()),
            per_question,
        }
    }

    /// Copy with every runtime zeroed, for determinism comparisons.
    pub fn without_runtimes(&self) -> Self {
        let mut r = self.clone();
        r.mean_runtime_s = 0.0;
        for q in &mut r.per_question {
            q.runtime_s = 0.0;
        }
        r
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    pub fn text_table(&self) -> String {
        let w = self
            .per_question
            .iter()
            .map(|r| r.id.chars().count())
            .max()
            .unwrap_or(2)
            .max(2);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<w$}  {:>3}  {:>5}  {:>9}  predicted",
            "id", "hit", "calls", "runtime_s"
        );
        for r in &self.per_question {
            let shown = match &r.error {
                Some(e) => format!("ERROR: {e}"),
                None => r.predicted.clone(),
            };
            let _ = writeln!(
                s,
                "{:<w$}  {:>3}  {:>5}  {:>9.3}  {}",
                r.id, r.hit, r.calls, r.runtime_s, shown
            );
        }
        let _ = writeln!(
            s,
            "n={}  hit@1={:.4}  mean_llm_calls={:.2}  mean_runtime_s={:.3}",
            self.n, self.hit_at_1, self.mean_llm_calls, self.mean_runtime_s
        );
        s
    }
}

/// File name for a record's trace: unsafe characters become `_`.
pub fn trace_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

/// Runs every record on up to `threads` workers. Each record gets its own
/// client from `make_client`; a failure (including client construction)
/// scores 0 and never aborts the batch. Rows keep dataset order.
pub fn evaluate<G, F>(
    dataset: &[DatasetRecord],
    engine: Engine<'_, G>,
    make_client: F,
    threads: usize,
    trace_dir: Option<&Path>,
) -> io::Result<EvalReport>
where
    G: GraphView + ?Sized,
    F: Fn(&DatasetRecord) -> Result<Box<dyn ChatClient>, LlmError> + Sync + Send,
{
    if let Some(dir) = trace_dir {
        fs::create_dir_all(dir)?;
    }
    let rows = map_ordered_bounded(dataset, threads.max(1), |rec| -> io::Result<QuestionResult> {
        let client = match make_client(rec) {
            Ok(c) => c,
            Err(e) => {
                return Ok(QuestionResult {
                    id: rec.id.clone(),
                    predicted: String::new(),
                    hit: 0,
                    calls: 0,
                    runtime_s: 0.0,
                    error: Some(e.to_string()),
                })
            }
        };
        let (row, trace) = match engine.answer_question(&rec.question, &rec.topic_entity, client.as_ref()) {
            Ok((answer, trace)) => (
                QuestionResult {
                    id: rec.id.clone(),
                    hit: hit_at_1(&answer, &rec.answers),
                    predicted: answer,
                    calls: trace.llm_calls(),
                    runtime_s: trace.wall_time_s,
                    error: None,
                },
                trace,
            ),
            Err(err) => {
                log::warn!("question {}: {err}", rec.id);
                let trace = *err.trace;
                (
                    QuestionResult {
                        id: rec.id.clone(),
                        predicted: String::new(),
                        hit: 0,
                        calls: trace.llm_calls(),
                        runtime_s: trace.wall_time_s,
                        error: Some(err.source.to_string()),
                    },
                    trace,
                )
            }
        };
        if let Some(dir) = trace_dir {
            write_trace(&trace, &dir.join(trace_file_name(&rec.id)))?;
        }
        Ok(row)
    });
    Ok(EvalReport::from_rows(rows.into_iter().collect::<io::Result<_>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashEncoder;
    use crate::kg::{KnowledgeGraph, Triple};
    use crate::pipeline::PipelineConfig;
    use crate::reasoning::{Prompts, ScriptEntry, ScriptedClient, ScriptedTranscript};
    use crate::scorer::{ScorerDims, ScorerParams};
    use proptest::prelude::*;
    use std::io::Write;

    fn golds(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hit_fixtures() {
        assert_eq!(hit_at_1("Haley Joel Osment", &golds(&["haley joel osment"])), 1);
        assert_eq!(hit_at_1("Paris", &golds(&["London"])), 0);
        assert_eq!(hit_at_1("  John Williams. ", &golds(&["John Williams"])), 1);
        assert_eq!(hit_at_1("\"Haley  Joel\tOsment\"", &golds(&["Haley Joel Osment"])), 1);
        assert_eq!(hit_at_1("HALEY JOEL OSMENT.", &golds(&["x", "Haley Joel Osment"])), 1);
        assert_eq!(hit_at_1("Haley Joel", &golds(&["Haley Joel Osment"])), 0);
    }

    proptest! {
        #[test]
        fn normalization_equivalence_is_a_hit(a in "[ a-zA-Z.\"]{0,12}", b in "[ a-zA-Z.\"]{0,12}") {
            if normalize(&a) == normalize(&b) {
                prop_assert_eq!(hit_at_1(&a, std::slice::from_ref(&b)), 1);
            }
            prop_assert_eq!(hit_at_1(&a, std::slice::from_ref(&a)), 1);
        }
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn dataset_loading() {
        let f = write("{\"id\":\"q1\",\"question\":\"Q?\",\"topic_entity\":\"m.x\",\"answers\":[\"A\"]}\n");
        let recs = load_dataset(f.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].topic_entity.as_str(), "m.x");

        assert!(load_dataset(write("").path()).unwrap().is_empty());

        let f = write("\n{\"id\":\"q1\",\"question\":\"Q?\",\"topic_entity\":\"m.x\"}\n");
        let msg = load_dataset(f.path()).unwrap_err().to_string();
        assert!(msg.contains(":2:") && msg.contains("answers"), "{msg}");

        let line = "{\"id\":\"q1\",\"question\":\"Q?\",\"topic_entity\":\"m.x\",\"answers\":[\"A\"]}";
        let f = write(&format!("{line}\n{line}\n"));
        assert!(matches!(
            load_dataset(f.path()).unwrap_err(),
            DatasetError::DuplicateId { line: 2, .. }
        ));
    }

    fn suite(n: usize, exhaust: Option<usize>) -> (KnowledgeGraph, Vec<DatasetRecord>, Vec<ScriptedTranscript>) {
        let mut triples = Vec::new();
        let mut labels = Vec::new();
        let mut recs = Vec::new();
        let mut scripts = Vec::new();
        for i in 0..n {
            let (t, a) = (format!("m.t{i}"), format!("m.a{i}"));
            triples.push(Triple::new(&t, "r.answer", &a).unwrap());
            labels.push((EntityId::new(a.clone()).unwrap(), format!("Answer {i}")));
            recs.push(DatasetRecord {
                id: format!("q{i}"),
                question: format!("What is the answer of topic {i}?"),
                topic_entity: EntityId::new(t).unwrap(),
                answers: vec![format!("Answer {i}")],
            });
            let mut ae = vec![
                ScriptEntry::reply(format!("ANSWER: Answer {i}\nSUFFICIENT: yes\nSOURCE: kg")),
                ScriptEntry::reply(format!("FINAL: Answer {i}")),
            ];
            if exhaust == Some(i) {
                ae.pop();
            }
            scripts.push(ScriptedTranscript {
                iqg: vec![ScriptEntry::reply(format!("SUBQUESTION: answer of topic {i}?"))],
                ae,
            });
        }
        let g = KnowledgeGraph::from_triples(triples).with_labels(labels);
        (g, recs, scripts)
    }

    fn run(n: usize, exhaust: Option<usize>, threads: usize, dir: Option<&Path>) -> EvalReport {
        let (g, recs, scripts) = suite(n, exhaust);
        let params = ScorerParams::init(ScorerDims::new(16, 4, 4).unwrap(), 1);
        let encoder = HashEncoder::new(16).unwrap();
        let prompts = Prompts::default();
        let config = PipelineConfig::default();
        let engine = Engine {
            graph: &g,
            params: &params,
            encoder: &encoder,
            prompts: &prompts,
            config: &config,
        };
        let index: std::collections::HashMap<_, _> = recs.iter().map(|r| r.id.clone()).zip(scripts).collect();
        evaluate(
            &recs,
            engine,
            |r| Ok(Box::new(ScriptedClient::new(index[&r.id].clone())) as Box<dyn ChatClient>),
            threads,
            dir,
        )
        .unwrap()
    }

    #[test]
    fn all_hits() {
        let r = run(2, None, 1, None);
        assert_eq!(r.hit_at_1, 1.0);
        assert_eq!(r.n, 2);
    }

    #[test]
    fn hundred_one_hop_questions_average_three_calls() {
        let r = run(100, None, 4, None);
        assert_eq!(r.mean_llm_calls, 3.0);
        assert_eq!(r.hit_at_1, 1.0);
    }

    #[test]
    fn exhaustion_is_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let r = run(2, Some(0), 2, Some(dir.path()));
        assert_eq!(r.per_question[0].hit, 0);
        assert!(r.per_question[0].error.as_deref().unwrap().contains("exhausted"));
        assert_eq!(r.per_question[1].hit, 1);
        assert_eq!(r.per_question[1].error, None);
        assert_eq!(r.hit_at_1, 0.5);
        assert!(dir.path().join("q0.json").exists() && dir.path().join("q1.json").exists());
    }

    #[test]
    fn report_is_self_consistent_and_deterministic() {
        let a = run(5, Some(3), 3, None);
        let b = run(5, Some(3), 1, None);
        assert_eq!(EvalReport::from_rows(a.per_question.clone()), a);
        assert_eq!(
            a.without_runtimes().to_canonical_json(),
            b.without_runtimes().to_canonical_json()
        );
        let back: EvalReport = serde_json::from_str(&a.to_canonical_json()).unwrap();
        assert_eq!(back, a);
        assert!(a.text_table().contains("hit@1=0.8000"));
    }

    #[test]
    fn trace_names_are_sanitized() {
        assert_eq!(trace_file_name("cwq/12 a"), "cwq_12_a.json");
    }
}
