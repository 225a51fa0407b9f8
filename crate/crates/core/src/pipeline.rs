//! The question-answering loop and its trace.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{node_text, TextEncoder};
use crate::kg::{EntityId, GraphView, KgError};
use crate::par::Execution;
use crate::reasoning::{
    ChatClient, Context, ContextEntry, Evidence, LlmError, Prompts, Reasoner, SubAnswerOutcome, SubQuestion, UNKNOWN,
};
use crate::scorer::{score_candidates_with, select_topk, ScoredCandidate, ScorerError, ScorerParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_iter: usize,
    pub top_k: usize,
    /// Ask for sufficiency in a dedicated call instead of inside the sub-answer reply.
    pub separate_sufficiency_call: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_iter: 5,
            top_k: 3,
            separate_sufficiency_call: false,
            execution: Execution::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iter == 0 {
            return Err("max_iter must be at least 1".into());
        }
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub index: usize,
    pub subquestion: String,
    pub frontier_before: Vec<EntityId>,
    pub candidates: Vec<ScoredCandidate>,
    pub selected: Vec<EntityId>,
    pub outcome: SubAnswerOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Sufficient,
    Done,
    MaxIter,
    RepeatedSubquestion,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub question: String,
    pub topic_entity: EntityId,
    pub iterations: Vec<IterationRecord>,
    /// `None` only in the partial trace of a failed run.
    pub final_answer: Option<String>,
    pub llm_calls_by_role: BTreeMap<String, u64>,
    pub stop_reason: StopReason,
    /// Seconds, millisecond precision.
    pub wall_time_s: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ReasoningTrace {
    pub fn llm_calls(&self) -> u64 {
        self.llm_calls_by_role.values().sum()
    }

    /// Canonical JSON: sorted keys, shortest round-trip floats, 2-space indent.
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Serializes through `serde_json::Value`, whose maps are key-sorted.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("trace types serialize infallibly");
    let mut s = serde_json::to_string_pretty(&v).expect("values serialize infallibly");
    s.push('\n');
    s
}

pub fn write_trace(trace: &ReasoningTrace, path: &Path) -> io::Result<()> {
    fs::write(path, trace.to_canonical_json())
}

pub fn read_trace(path: &Path) -> io::Result<ReasoningTrace> {
    let text = fs::read_to_string(path)?;
    ReasoningTrace::from_json(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
}

/// A failed run with everything recorded up to the failure.
#[derive(Debug, Error)]
#[error("{source}")]
pub struct PipelineError {
    #[source]
    pub source: StepError,
    pub trace: Box<ReasoningTrace>,
}

fn round_ms(secs: f64) -> f64 {
    (secs * 1000.0).round() / 1000.0
}

/// Everything a run reads but does not own.
pub struct Engine<'a, G: GraphView + ?Sized> {
    pub graph: &'a G,
    pub params: &'a ScorerParams,
    pub encoder: &'a dyn TextEncoder,
    pub prompts: &'a Prompts,
    pub config: &'a PipelineConfig,
}

impl<G: GraphView + ?Sized> Clone for Engine<'_, G> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<G: GraphView + ?Sized> Copy for Engine<'_, G> {}

impl<'a, G: GraphView + ?Sized> Engine<'a, G> {
    /// Answers one question. `client` serves both roles and should not be
    /// shared with concurrent runs if it is stateful.
    pub fn answer_question(
        &self,
        question: &str,
        topic: &EntityId,
        client: &dyn ChatClient,
    ) -> Result<(String, ReasoningTrace), PipelineError> {
        let start = Instant::now();
        let reasoner = Reasoner::new(client, self.prompts);
        let mut trace = ReasoningTrace {
            question: question.to_string(),
            topic_entity: topic.clone(),
            iterations: Vec::new(),
            final_answer: None,
            llm_calls_by_role: BTreeMap::new(),
            stop_reason: StopReason::Error,
            wall_time_s: 0.0,
            warnings: Vec::new(),
        };
        let result = self.run(question, topic, &reasoner, &mut trace);
        trace.llm_calls_by_role = reasoner.calls_by_role();
        trace.wall_time_s = round_ms(start.elapsed().as_secs_f64());
        match result {
            Ok(answer) => Ok((answer, trace)),
            Err(source) => {
                trace.stop_reason = StopReason::Error;
                Err(PipelineError {
                    source,
                    trace: Box::new(trace),
                })
            }
        }
    }

    fn run(
        &self,
        question: &str,
        topic: &EntityId,
        reasoner: &Reasoner<'_>,
        trace: &mut ReasoningTrace,
    ) -> Result<String, StepError> {
        let cfg = self.config;
        cfg.validate().map_err(StepError::Config)?;
        let fused = !cfg.separate_sufficiency_call;

        let mut frontier = if self.graph.contains(topic)? {
            vec![topic.clone()]
        } else {
            let msg = format!("topic entity {topic} not in graph; starting with an empty frontier");
            log::warn!("{msg}");
            trace.warnings.push(msg);
            Vec::new()
        };
        let mut ctx = Context::new();
        let mut stop = StopReason::MaxIter;

        for index in 1..=cfg.max_iter {
            let subquestion = match reasoner.generate_subquestion(question, &ctx)? {
                SubQuestion::Sub(s) => s,
                SubQuestion::Done => {
                    stop = StopReason::Done;
                    break;
                }
                SubQuestion::Repeated(s) => {
                    trace
                        .warnings
                        .push(format!("sub-question repeated after reprompt: {s}"));
                    stop = StopReason::RepeatedSubquestion;
                    break;
                }
            };

            let candidates = if frontier.is_empty() {
                Vec::new()
            } else {
                score_candidates_with(
                    self.graph,
                    &frontier,
                    &subquestion,
                    self.encoder,
                    self.params,
                    cfg.execution,
                )?
            };
            let selected = select_topk(&candidates, cfg.top_k);
            let evidence = self.evidence(&candidates, &selected);

            let mut outcome = reasoner.answer_subquestion(question, &ctx, &subquestion, &evidence, fused)?;
            // An empty answer cannot occur after parsing, but keep the context well formed regardless.
            let entry = ContextEntry::new(subquestion.clone(), outcome.answer.clone())
                .unwrap_or_else(|| ContextEntry::new(subquestion.clone(), UNKNOWN).expect("non-empty"));
            ctx.push(entry);
            if !fused {
                outcome.sufficient = reasoner.check_sufficiency(question, &ctx)?;
            }
            let sufficient = outcome.sufficient;

            trace.iterations.push(IterationRecord {
                index,
                subquestion,
                frontier_before: std::mem::replace(&mut frontier, selected.clone()),
                candidates,
                selected,
                outcome,
            });
            if sufficient {
                stop = StopReason::Sufficient;
                break;
            }
        }

        let answer = reasoner.final_answer(question, &ctx)?;
        trace.final_answer = Some(answer.clone());
        trace.stop_reason = stop;
        Ok(answer)
    }

    /// One evidence line per selected entity, from its best-scoring edge.
    fn evidence(&self, candidates: &[ScoredCandidate], selected: &[EntityId]) -> Vec<Evidence> {
        selected
            .iter()
            .filter_map(|e| candidates.iter().find(|c| &c.entity == e))
            .map(|c| {
                let label = self.graph.label(&c.entity);
                Evidence {
                    fact: node_text(&label, c.via_edge.relation.as_str(), c.via_edge.direction),
                    label,
                    score: c.score,
                }
            })
            .collect()
    }
}

/// Convenience wrapper around [`Engine::answer_question`].
pub fn answer_question<G: GraphView + ?Sized>(
    question: &str,
    topic: &EntityId,
    graph: &G,
    params: &ScorerParams,
    client: &dyn ChatClient,
    encoder: &dyn TextEncoder,
    config: &PipelineConfig,
) -> Result<(String, ReasoningTrace), PipelineError> {
    let prompts = Prompts::default();
    Engine {
        graph,
        params,
        encoder,
        prompts: &prompts,
        config,
    }
    .answer_question(question, topic, client)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashEncoder;
    use crate::kg::{KnowledgeGraph, Triple};
    use crate::reasoning::{Role, ScriptEntry, ScriptedClient, ScriptedTranscript};
    use crate::scorer::ScorerDims;
    use std::collections::BTreeSet;

    fn chain(n: usize) -> KnowledgeGraph {
        let triples =
            (0..n).map(|i| Triple::new(&format!("m.{i}"), &format!("r.hop{i}"), &format!("m.{}", i + 1)).unwrap());
        let labels = (0..=n).map(|i| (EntityId::new(format!("m.{i}")).unwrap(), format!("Entity {i}")));
        KnowledgeGraph::from_triples(triples).with_labels(labels)
    }

    fn script(iqg: &[&str], ae: &[&str]) -> ScriptedClient {
        ScriptedClient::new(ScriptedTranscript {
            iqg: iqg.iter().map(|r| ScriptEntry::reply(*r)).collect(),
            ae: ae.iter().map(|r| ScriptEntry::reply(*r)).collect(),
        })
    }

    fn hops_script(n: usize) -> ScriptedClient {
        let iqg: Vec<String> = (1..=n).map(|i| format!("SUBQUESTION: what is hop {i}?")).collect();
        let mut ae: Vec<String> = (1..=n)
            .map(|i| {
                let suff = if i == n { "yes" } else { "no" };
                format!("ANSWER: Entity {i}\nSUFFICIENT: {suff}\nSOURCE: kg")
            })
            .collect();
        ae.push(format!("FINAL: Entity {n}"));
        let iqg: Vec<&str> = iqg.iter().map(String::as_str).collect();
        let ae: Vec<&str> = ae.iter().map(String::as_str).collect();
        script(&iqg, &ae)
    }

    struct Fixture {
        params: ScorerParams,
        encoder: HashEncoder,
        prompts: Prompts,
        config: PipelineConfig,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                params: ScorerParams::init(ScorerDims::new(32, 8, 8).unwrap(), 7),
                encoder: HashEncoder::new(32).unwrap(),
                prompts: Prompts::default(),
                config: PipelineConfig::default(),
            }
        }

        fn engine<'a>(&'a self, g: &'a KnowledgeGraph) -> Engine<'a, KnowledgeGraph> {
            Engine {
                graph: g,
                params: &self.params,
                encoder: &self.encoder,
                prompts: &self.prompts,
                config: &self.config,
            }
        }
    }

    fn m(s: &str) -> EntityId {
        EntityId::new(s).unwrap()
    }

    #[test]
    fn call_counts_follow_two_n_plus_one() {
        let fx = Fixture::new();
        for n in 1..=3 {
            let g = chain(n);
            let client = hops_script(n);
            let (answer, trace) = fx.engine(&g).answer_question("q?", &m("m.0"), &client).unwrap();
            assert_eq!(trace.llm_calls(), 2 * n as u64 + 1, "n = {n}");
            assert_eq!(trace.iterations.len(), n);
            assert_eq!(trace.stop_reason, StopReason::Sufficient);
            assert_eq!(answer, format!("Entity {n}"));
            assert_eq!(client.remaining(Role::Iqg) + client.remaining(Role::Ae), 0);
        }
    }

    #[test]
    fn immediate_done() {
        let fx = Fixture::new();
        let g = chain(1);
        let client = script(&["DONE"], &["FINAL: X"]);
        let (answer, trace) = fx.engine(&g).answer_question("q?", &m("m.0"), &client).unwrap();
        assert_eq!(answer, "X");
        assert_eq!(trace.llm_calls(), 2);
        assert!(trace.iterations.is_empty());
        assert_eq!(trace.stop_reason, StopReason::Done);
        assert!(trace.to_canonical_json().contains("\"iterations\": []"));
    }

    #[test]
    fn frontier_follows_selection() {
        let fx = Fixture::new();
        let g = chain(3);
        let client = hops_script(3);
        let (_, trace) = fx.engine(&g).answer_question("q?", &m("m.0"), &client).unwrap();
        assert_eq!(trace.iterations[0].frontier_before, vec![m("m.0")]);
        for w in trace.iterations.windows(2) {
            let prev: BTreeSet<_> = w[0].candidates.iter().map(|c| &c.entity).collect();
            assert!(w[1].frontier_before.iter().all(|e| prev.contains(e)));
            assert_eq!(w[1].frontier_before, w[0].selected);
        }
        for it in &trace.iterations {
            assert!(it.selected.len() <= fx.config.top_k);
        }
    }

    #[test]
    fn missing_topic_uses_internal_knowledge() {
        let fx = Fixture::new();
        let g = chain(1);
        let client = ScriptedClient::new(ScriptedTranscript {
            iqg: vec![ScriptEntry::reply("SUBQUESTION: What movie has this soundtrack?")],
            ae: vec![
                ScriptEntry::expecting("returned no evidence", "ANSWER: Forrest Gump\nSUFFICIENT: yes"),
                ScriptEntry::reply("FINAL: Forrest Gump"),
            ],
        });
        let (answer, trace) = fx.engine(&g).answer_question("q?", &m("m.unknown"), &client).unwrap();
        assert_eq!(answer, "Forrest Gump");
        assert_eq!(trace.warnings.len(), 1);
        assert!(trace.iterations[0].candidates.is_empty());
        assert!(trace.iterations[0].outcome.used_internal_knowledge);
    }

    #[test]
    fn max_iter_bounds_iterations() {
        let mut fx = Fixture::new();
        fx.config.max_iter = 2;
        let g = chain(3);
        let client = script(
            &["SUBQUESTION: a?", "SUBQUESTION: b?"],
            &[
                "ANSWER: x\nSUFFICIENT: no",
                "ANSWER: y\nSUFFICIENT: no",
                "FINAL: UNKNOWN",
            ],
        );
        let (answer, trace) = fx.engine(&g).answer_question("q?", &m("m.0"), &client).unwrap();
        assert_eq!(answer, "UNKNOWN");
        assert_eq!(trace.iterations.len(), 2);
        assert_eq!(trace.stop_reason, StopReason::MaxIter);
    }

    #[test]
    fn separate_sufficiency_adds_one_call_per_iteration() {
        let mut fx = Fixture::new();
        fx.config.separate_sufficiency_call = true;
        let g = chain(2);
        let client = script(
            &["SUBQUESTION: a?", "SUBQUESTION: b?"],
            &[
                "ANSWER: Entity 1",
                "SUFFICIENT: no",
                "ANSWER: Entity 2",
                "SUFFICIENT: yes",
                "FINAL: Entity 2",
            ],
        );
        let (_, trace) = fx.engine(&g).answer_question("q?", &m("m.0"), &client).unwrap();
        assert_eq!(trace.llm_calls(), 7);
        assert!(trace.iterations[1].outcome.sufficient);
    }

    #[test]
    fn repeated_subquestion_ends_loop() {
        let fx = Fixture::new();
        let g = chain(2);
        let client = script(
            &["SUBQUESTION: a?", "SUBQUESTION: a?", "SUBQUESTION: a?"],
            &["ANSWER: x\nSUFFICIENT: no", "FINAL: x"],
        );
        let (_, trace) = fx.engine(&g).answer_question("q?", &m("m.0"), &client).unwrap();
        assert_eq!(trace.stop_reason, StopReason::RepeatedSubquestion);
        assert_eq!(trace.iterations.len(), 1);
    }

    #[test]
    fn llm_failure_keeps_partial_trace() {
        let fx = Fixture::new();
        let g = chain(2);
        let client = script(&["SUBQUESTION: a?"], &["ANSWER: x\nSUFFICIENT: no"]);
        let err = fx.engine(&g).answer_question("q?", &m("m.0"), &client).unwrap_err();
        assert!(matches!(
            err.source,
            StepError::Llm(LlmError::Exhausted { role: Role::Iqg, .. })
        ));
        assert_eq!(err.trace.iterations.len(), 1);
        assert_eq!(err.trace.final_answer, None);
        assert_eq!(err.trace.llm_calls(), 3);
    }

    #[test]
    fn trace_is_deterministic_and_round_trips() {
        let fx = Fixture::new();
        let g = chain(3);
        let run = || {
            let (_, mut t) = fx.engine(&g).answer_question("q?", &m("m.0"), &hops_script(3)).unwrap();
            t.wall_time_s = 0.0;
            t
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_canonical_json(), b.to_canonical_json());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        write_trace(&a, &path).unwrap();
        let first = fs::read(&path).unwrap();
        write_trace(&a, &path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        assert_eq!(read_trace(&path).unwrap(), a);
    }

    #[test]
    fn config_rejects_zero() {
        let cfg = PipelineConfig {
            top_k: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg: PipelineConfig = serde_json::from_str(r#"{"max_iter": 2}"#).unwrap();
        assert_eq!((cfg.max_iter, cfg.top_k), (2, 3));
    }
}
