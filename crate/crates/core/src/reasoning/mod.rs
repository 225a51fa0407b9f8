//! LLM roles.
//!
//! The question-generation role proposes the next sub-question from the
//! original question and the context so far. The answering role answers a
//! sub-question from evidence, judges sufficiency in the same reply, and
//! synthesizes the final answer. Replies use line prefixes
//! (`SUBQUESTION:`, `ANSWER:`, `SUFFICIENT:`, `SOURCE:`, `FINAL:`); a
//! malformed reply gets exactly one reprompt.

mod client;
mod prompts;

pub use client::{
    CallCounts, ChatClient, ChatMessage, HttpChatClient, MessageRole, Role, ScriptEntry, ScriptedClient,
    ScriptedTranscript, TOKEN_ENV,
};
pub use prompts::{fill, render_context, render_evidence, Prompts};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel answer for sub-questions that could not be answered.
pub const UNKNOWN: &str = "UNKNOWN";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("scripted transcript for role {role} exhausted at call {index}")]
    Exhausted { role: Role, index: usize },
    #[error("scripted call {index} for role {role}: prompt does not contain expected substring {expected:?}")]
    ExpectMismatch { role: Role, index: usize, expected: String },
    #[error("chat endpoint returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("chat request failed: {0}")]
    Transport(String),
    #[error("malformed chat response body: {0}")]
    MalformedBody(String),
    #[error("reply for role {role} does not follow the {expected} format after retry: {raw:?}")]
    Format {
        role: Role,
        expected: &'static str,
        raw: String,
    },
    #[error("invalid transcript: {0}")]
    Transcript(String),
}

impl LlmError {
    /// Errors caused by the model's output rather than by the transport.
    pub fn is_format(&self) -> bool {
        matches!(self, LlmError::Format { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawEntry", into = "RawEntry")]
pub struct ContextEntry {
    subquestion: String,
    subanswer: String,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    subquestion: String,
    subanswer: String,
}

impl TryFrom<RawEntry> for ContextEntry {
    type Error = String;
    fn try_from(r: RawEntry) -> Result<Self, String> {
        ContextEntry::new(r.subquestion, r.subanswer).ok_or_else(|| "empty context entry".to_string())
    }
}

impl From<ContextEntry> for RawEntry {
    fn from(e: ContextEntry) -> Self {
        RawEntry {
            subquestion: e.subquestion,
            subanswer: e.subanswer,
        }
    }
}

impl ContextEntry {
    /// `None` if either side is blank.
    pub fn new(subquestion: impl Into<String>, subanswer: impl Into<String>) -> Option<Self> {
        let (subquestion, subanswer) = (subquestion.into(), subanswer.into());
        if subquestion.trim().is_empty() || subanswer.trim().is_empty() {
            return None;
        }
        Some(Self { subquestion, subanswer })
    }

    pub fn subquestion(&self) -> &str {
        &self.subquestion
    }

    pub fn subanswer(&self) -> &str {
        &self.subanswer
    }
}

/// Ordered sub-question/answer history. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context(Vec<ContextEntry>);

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: ContextEntry) {
        self.0.push(entry);
    }

    pub fn entries(&self) -> &[ContextEntry] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_subquestion(&self, q: &str) -> bool {
        self.0.iter().any(|e| e.subquestion == q)
    }
}

/// One evidence line shown to the answering role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub label: String,
    /// Verbalized connecting edge.
    pub fact: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubAnswerOutcome {
    pub answer: String,
    pub sufficient: bool,
    pub used_internal_knowledge: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubQuestion {
    Sub(String),
    Done,
    /// The model repeated an earlier sub-question even after being told not to.
    Repeated(String),
}

/// Strips whitespace and simple markdown emphasis around a line.
fn clean(line: &str) -> &str {
    line.trim().trim_matches(|c| c == '*' || c == '`').trim()
}

fn field<'a>(reply: &'a str, prefix: &str) -> Option<&'a str> {
    reply.lines().find_map(|l| {
        let l = clean(l);
        let head = l.get(..prefix.len())?;
        head.eq_ignore_ascii_case(prefix)
            .then(|| clean(&l[prefix.len()..]))
            .filter(|v| !v.is_empty())
    })
}

fn parse_yes_no(v: &str) -> Option<bool> {
    match v.trim_end_matches('.').to_ascii_lowercase().as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

/// `SUBQUESTION: <text>` or a bare `DONE` line; the first one found wins.
pub fn parse_subquestion(reply: &str) -> Option<SubQuestion> {
    reply.lines().find_map(|l| {
        let l = clean(l);
        if l.eq_ignore_ascii_case("DONE") {
            return Some(SubQuestion::Done);
        }
        let head = l.get(..12)?;
        if head.eq_ignore_ascii_case("SUBQUESTION:") {
            let text = clean(&l[12..]);
            return (!text.is_empty()).then(|| SubQuestion::Sub(text.to_string()));
        }
        None
    })
}

/// Parses the answer reply. `SUFFICIENT` is required only when `fused`;
/// a missing `SOURCE` defaults to internal exactly when there was no evidence.
pub fn parse_subanswer(reply: &str, fused: bool, had_evidence: bool) -> Option<SubAnswerOutcome> {
    let answer = field(reply, "ANSWER:")?;
    let sufficient = match field(reply, "SUFFICIENT:").map(parse_yes_no) {
        Some(Some(v)) => v,
        Some(None) => return None,
        None if fused => return None,
        None => false,
    };
    let used_internal_knowledge = match field(reply, "SOURCE:").map(str::to_ascii_lowercase).as_deref() {
        Some("kg") => false,
        Some("internal") => true,
        Some(_) => return None,
        None => !had_evidence,
    };
    Some(SubAnswerOutcome {
        answer: answer.to_string(),
        sufficient,
        used_internal_knowledge,
    })
}

pub fn parse_sufficiency(reply: &str) -> Option<bool> {
    field(reply, "SUFFICIENT:").and_then(parse_yes_no)
}

pub fn parse_final(reply: &str) -> Option<String> {
    field(reply, "FINAL:").map(str::to_string)
}

/// Runs the LLM roles through one chat client and counts every call.
pub struct Reasoner<'a> {
    client: &'a dyn ChatClient,
    prompts: &'a Prompts,
    counts: CallCounts,
}

impl<'a> Reasoner<'a> {
    pub fn new(client: &'a dyn ChatClient, prompts: &'a Prompts) -> Self {
        Self {
            client,
            prompts,
            counts: CallCounts::default(),
        }
    }

    pub fn counts(&self) -> &CallCounts {
        &self.counts
    }

    /// Calls per role, keyed by role name.
    pub fn calls_by_role(&self) -> BTreeMap<String, u64> {
        Role::ALL
            .iter()
            .map(|r| (r.as_str().to_string(), self.counts.get(*r)))
            .collect()
    }

    fn send(&self, role: Role, messages: &[ChatMessage]) -> Result<String, LlmError> {
        self.counts.bump(role);
        self.client.chat(role, messages)
    }

    fn conversation(&self, prompt: String) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(self.prompts.system.trim_end()),
            ChatMessage::user(prompt),
        ]
    }

    /// Sends `prompt`; if `parse` rejects the reply, reprompts once with the
    /// format reminder. At most two calls.
    fn ask<T>(
        &self,
        role: Role,
        prompt: String,
        expected: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, LlmError> {
        let mut messages = self.conversation(prompt);
        let reply = self.send(role, &messages)?;
        if let Some(v) = parse(&reply) {
            return Ok(v);
        }
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(self.prompts.format_retry.trim_end()));
        let raw = self.send(role, &messages)?;
        parse(&raw).ok_or(LlmError::Format { role, expected, raw })
    }

    pub fn render_iqg(&self, question: &str, ctx: &Context) -> String {
        fill(
            &self.prompts.iqg,
            &[("question", question), ("context", &render_context(ctx))],
        )
    }

    /// Next sub-question, or `Done`. A sub-question already present in the
    /// context triggers one reprompt; this shares the two-call budget with
    /// the format retry.
    pub fn generate_subquestion(&self, question: &str, ctx: &Context) -> Result<SubQuestion, LlmError> {
        let role = Role::Iqg;
        let mut messages = self.conversation(self.render_iqg(question, ctx));
        let reply = self.send(role, &messages)?;
        let followup = match parse_subquestion(&reply) {
            Some(SubQuestion::Sub(s)) if ctx.has_subquestion(&s) => {
                fill(&self.prompts.iqg_repeat, &[("subquestion", &s)])
            }
            Some(parsed) => return Ok(parsed),
            None => self.prompts.format_retry.clone(),
        };
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(followup.trim_end()));
        let raw = self.send(role, &messages)?;
        match parse_subquestion(&raw) {
            Some(SubQuestion::Sub(s)) if ctx.has_subquestion(&s) => Ok(SubQuestion::Repeated(s)),
            Some(parsed) => Ok(parsed),
            None => Err(LlmError::Format {
                role,
                expected: "SUBQUESTION/DONE",
                raw,
            }),
        }
    }

    pub fn render_answer(&self, question: &str, ctx: &Context, subquestion: &str, evidence: &[Evidence]) -> String {
        let context = render_context(ctx);
        if evidence.is_empty() {
            fill(
                &self.prompts.answer_internal,
                &[
                    ("question", question),
                    ("context", &context),
                    ("subquestion", subquestion),
                ],
            )
        } else {
            fill(
                &self.prompts.answer,
                &[
                    ("question", question),
                    ("context", &context),
                    ("subquestion", subquestion),
                    ("evidence", &render_evidence(evidence)),
                ],
            )
        }
    }

    /// Answers `subquestion` from `evidence`. With `fused`, the same reply
    /// carries the sufficiency verdict; otherwise `sufficient` is `false` and
    /// the caller is expected to use [`Reasoner::check_sufficiency`].
    pub fn answer_subquestion(
        &self,
        question: &str,
        ctx: &Context,
        subquestion: &str,
        evidence: &[Evidence],
        fused: bool,
    ) -> Result<SubAnswerOutcome, LlmError> {
        let prompt = self.render_answer(question, ctx, subquestion, evidence);
        let had_evidence = !evidence.is_empty();
        let mut outcome = self.ask(Role::Ae, prompt, "ANSWER/SUFFICIENT/SOURCE", |r| {
            parse_subanswer(r, fused, had_evidence)
        })?;
        if !fused {
            outcome.sufficient = false;
        }
        Ok(outcome)
    }

    /// Separate sufficiency judgement over the context.
    pub fn check_sufficiency(&self, question: &str, ctx: &Context) -> Result<bool, LlmError> {
        let prompt = fill(
            &self.prompts.sufficiency,
            &[("question", question), ("context", &render_context(ctx))],
        );
        self.ask(Role::Ae, prompt, "SUFFICIENT", parse_sufficiency)
    }

    pub fn render_final(&self, question: &str, ctx: &Context) -> String {
        fill(
            &self.prompts.final_answer,
            &[("question", question), ("context", &render_context(ctx))],
        )
    }

    pub fn final_answer(&self, question: &str, ctx: &Context) -> Result<String, LlmError> {
        self.ask(Role::Ae, self.render_final(question, ctx), "FINAL", parse_final)
    }
}
