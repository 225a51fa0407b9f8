//! Chat clients: a scripted transcript player and an HTTP chat-completion client.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::LlmError;

/// Which LLM role a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Sub-question generation.
    Iqg,
    /// Sub-answering, sufficiency and final synthesis.
    Ae,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Iqg, Role::Ae];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Iqg => "iqg",
            Role::Ae => "ae",
        }
    }

    fn index(self) -> usize {
        match self {
            Role::Iqg => 0,
            Role::Ae => 1,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn chat(&self, role: Role, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn chat(&self, role: Role, messages: &[ChatMessage]) -> Result<String, LlmError> {
        (**self).chat(role, messages)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Arc<C> {
    fn chat(&self, role: Role, messages: &[ChatMessage]) -> Result<String, LlmError> {
        (**self).chat(role, messages)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn chat(&self, role: Role, messages: &[ChatMessage]) -> Result<String, LlmError> {
        (**self).chat(role, messages)
    }
}

/// Per-role call counters.
#[derive(Debug, Default)]
pub struct CallCounts([AtomicU64; 2]);

impl CallCounts {
    pub(crate) fn bump(&self, role: Role) {
        self.0[role.index()].fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, role: Role) -> u64 {
        self.0[role.index()].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        Role::ALL.iter().map(|r| self.get(*r)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    pub reply: String,
}

impl ScriptEntry {
    pub fn reply(reply: impl Into<String>) -> Self {
        Self {
            expect: None,
            reply: reply.into(),
        }
    }

    pub fn expecting(expect: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            expect: Some(expect.into()),
            reply: reply.into(),
        }
    }
}

/// Canned replies per role, consumed strictly in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTranscript {
    #[serde(default)]
    pub iqg: Vec<ScriptEntry>,
    #[serde(default)]
    pub ae: Vec<ScriptEntry>,
}

impl ScriptedTranscript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))
    }
}

/// Deterministic client replaying a [`ScriptedTranscript`].
///
/// Stateful: confine one instance to one pipeline run.
#[derive(Debug)]
pub struct ScriptedClient {
    queues: Mutex<[VecDeque<ScriptEntry>; 2]>,
    calls: CallCounts,
}

impl ScriptedClient {
    pub fn new(transcript: ScriptedTranscript) -> Self {
        Self {
            queues: Mutex::new([transcript.iqg.into(), transcript.ae.into()]),
            calls: CallCounts::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(ScriptedTranscript::load(path)?))
    }

    pub fn calls(&self, role: Role) -> u64 {
        self.calls.get(role)
    }

    pub fn remaining(&self, role: Role) -> usize {
        self.queues.lock().expect("transcript lock")[role.index()].len()
    }
}

impl ChatClient for ScriptedClient {
    fn chat(&self, role: Role, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let index = self.calls.get(role) as usize;
        self.calls.bump(role);
        let entry = self.queues.lock().expect("transcript lock")[role.index()]
            .pop_front()
            .ok_or(LlmError::Exhausted { role, index })?;
        if let Some(expected) = &entry.expect {
            if !messages.iter().any(|m| m.content.contains(expected.as_str())) {
                return Err(LlmError::ExpectMismatch {
                    role,
                    index,
                    expected: expected.clone(),
                });
            }
        }
        Ok(entry.reply)
    }
}

pub const TOKEN_ENV: &str = "IQUEST_LLM_TOKEN";

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// OpenAI-style `POST <base>/chat/completions` client. Stateless; the same
/// model serves both roles.
pub struct HttpChatClient {
    url: String,
    model: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// Reads the bearer token from `IQUEST_LLM_TOKEN` if set.
    pub fn new(base_url: &str, model: &str) -> Result<Self, LlmError> {
        Self::with_token(base_url, model, std::env::var(TOKEN_ENV).ok())
    }

    pub fn with_token(base_url: &str, model: &str, token: Option<String>) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            token,
            client,
        })
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, _role: Role, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let mut req = self.client.post(&self.url).json(&CompletionRequest {
            model: &self.model,
            messages,
            temperature: 0.0,
        });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if status != reqwest::StatusCode::OK {
            return Err(LlmError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&body).map_err(|e| LlmError::MalformedBody(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedBody("no choices in response".into()))
    }
}
