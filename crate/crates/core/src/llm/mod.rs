//! Negotiation backends driven by a chat-completion model.
//!
//! [`PromptBackend`] turns negotiation requests into prompts, sends them
//! through a [`Completion`] and parses the replies. The completion is either
//! a live HTTP [`ChatClient`] or a [`FixtureStore`] that replays recorded
//! replies by prompt hash and never touches the network.

pub mod client;
pub mod parse;
pub mod prompt;

pub use client::ChatClient;
pub use parse::{extract_json, parse_reply, render_reply, ParsedPrecedence, ParsedReply};
pub use prompt::{
    build_merge_prompt, build_opinion_prompt, build_resolve_prompt, PromptBundle, MERGE_SCHEMA, PRECEDENCE_SCHEMA,
    PROMPT_VERSION,
};

use crate::domain::VehicleId;
use crate::negotiation::{BackendError, NegotiationContext, NegotiatorBackend, PassOrder, PrecedencePreference};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub temperature: f64,
    /// Seconds.
    pub request_timeout: f64,
    pub max_retries: u32,
    /// Requests per second; zero disables limiting.
    pub rate_limit: f64,
    /// First backoff delay in seconds; doubles per retry.
    pub backoff_base: f64,
    pub jitter_seed: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-4o".to_string(),
            api_key_env_var: "OPENAI_API_KEY".to_string(),
            temperature: 0.0,
            request_timeout: 60.0,
            max_retries: 3,
            rate_limit: 2.0,
            backoff_base: 1.0,
            jitter_seed: 0,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err("temperature must be >= 0".into());
        }
        if !(self.request_timeout > 0.0) {
            return Err("request_timeout must be > 0".into());
        }
        if !(self.rate_limit >= 0.0) || !(self.backoff_base >= 0.0) {
            return Err("rate_limit and backoff_base must be >= 0".into());
        }
        Ok(())
    }
}

/// One HTTP attempt as seen by the client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    /// Backoff slept before this attempt.
    pub delay_ms: u64,
    pub status: Option<u16>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("environment variable {var} with the API key is not set")]
    MissingApiKey { var: String },
    #[error("transport failure: {message}")]
    Transport { message: String, attempts: Vec<AttemptRecord> },
    #[error("every one of {} attempts timed out", attempts.len())]
    Timeout { attempts: Vec<AttemptRecord> },
    #[error("endpoint rejected the credentials (status {status})")]
    AuthFailure { status: u16, attempts: Vec<AttemptRecord> },
    #[error("gave up after {} attempts", attempts.len())]
    RetriesExhausted { attempts: Vec<AttemptRecord> },
    #[error("unparseable reply ({message}) in bytes {span:?}")]
    ParseFailure { message: String, span: (usize, usize) },
    #[error("reply violates schema at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("no recorded reply for prompt hash {hash}")]
    FixtureMiss { hash: String },
    #[error("fixture file: {0}")]
    Fixture(String),
}

impl LlmError {
    pub fn attempts(&self) -> &[AttemptRecord] {
        match self {
            LlmError::Transport { attempts, .. }
            | LlmError::Timeout { attempts }
            | LlmError::AuthFailure { attempts, .. }
            | LlmError::RetriesExhausted { attempts } => attempts,
            _ => &[],
        }
    }

    fn is_format_problem(&self) -> bool {
        matches!(self, LlmError::ParseFailure { .. } | LlmError::SchemaViolation { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: &str) -> ChatMessage {
        ChatMessage {
            role: role.to_string(),
            content: content.to_string(),
        }
    }
}

/// Anything that answers a chat conversation with text.
pub trait Completion: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

/// SHA-256 of the message contents joined by blank lines, hex encoded.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    let joined: Vec<&str> = messages.iter().map(|m| m.content.as_str()).collect();
    let digest = Sha256::digest(joined.join("\n\n").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub prompt_hash: String,
    pub reply: String,
}

/// Recorded replies keyed by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct FixtureStore {
    replies: HashMap<String, String>,
}

impl FixtureStore {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> FixtureStore {
        FixtureStore {
            replies: records.into_iter().map(|r| (r.prompt_hash, r.reply)).collect(),
        }
    }

    /// Loads a JSONL file of `{"prompt_hash", "reply"}` records.
    pub fn load(path: &Path) -> Result<FixtureStore, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: FixtureRecord =
                serde_json::from_str(line).map_err(|e| LlmError::Fixture(format!("line {}: {e}", n + 1)))?;
            records.push(record);
        }
        Ok(FixtureStore::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl Completion for FixtureStore {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let hash = prompt_hash(messages);
        self.replies.get(&hash).cloned().ok_or(LlmError::FixtureMiss { hash })
    }
}

/// Negotiator that asks a chat model through prompts.
pub struct PromptBackend<C: Completion> {
    name: String,
    completion: C,
}

pub type LlmBackend = PromptBackend<ChatClient>;
pub type FixtureBackend = PromptBackend<FixtureStore>;

impl<C: Completion> PromptBackend<C> {
    pub fn new(name: &str, completion: C) -> PromptBackend<C> {
        PromptBackend {
            name: name.to_string(),
            completion,
        }
    }

    pub fn completion(&self) -> &C {
        &self.completion
    }

    /// Sends the prompt and parses the reply, asking once for a reformatted
    /// answer if the first reply does not fit the schema.
    pub fn ask(&self, prompt: &PromptBundle, known: &[VehicleId]) -> Result<ParsedReply, LlmError> {
        let mut messages = vec![
            ChatMessage::new("system", &prompt.system_text),
            ChatMessage::new("user", &prompt.user_text),
        ];
        let raw = self.completion.complete(&messages)?;
        match parse_reply(&raw, &prompt.expected_schema_id, known) {
            Err(e) if e.is_format_problem() => {
                messages.push(ChatMessage::new("assistant", &raw));
                messages.push(ChatMessage::new(
                    "user",
                    &prompt::reformat_request(&prompt.expected_schema_id, &e.to_string()),
                ));
                let retry = self.completion.complete(&messages)?;
                parse_reply(&retry, &prompt.expected_schema_id, known)
            }
            other => other,
        }
    }

    fn fail(&self, e: LlmError) -> BackendError {
        BackendError {
            backend: self.name.clone(),
            message: e.to_string(),
        }
    }

    fn precedences(
        &self,
        prompt: &PromptBundle,
        ctx: &NegotiationContext,
        stated_by: impl Fn(&ParsedPrecedence) -> VehicleId,
    ) -> Result<Vec<PrecedencePreference>, BackendError> {
        match self.ask(prompt, &ctx.ids()).map_err(|e| self.fail(e))? {
            ParsedReply::Precedences(items) => Ok(items
                .iter()
                .map(|p| PrecedencePreference {
                    first: p.first,
                    second: p.second,
                    stated_by: stated_by(p),
                    rationale: p.reason.clone(),
                })
                .collect()),
            ParsedReply::Merge(_) => Err(self.fail(LlmError::SchemaViolation {
                path: "$".into(),
                message: "expected precedences".into(),
            })),
        }
    }
}

impl<C: Completion> NegotiatorBackend for PromptBackend<C> {
    fn name(&self) -> &str {
        &self.name
    }

    fn opinion(&self, ctx: &NegotiationContext, ego: VehicleId) -> Result<Vec<PrecedencePreference>, BackendError> {
        self.precedences(&build_opinion_prompt(ctx, ego), ctx, |_| ego)
    }

    fn resolve(
        &self,
        ctx: &NegotiationContext,
        disputed: &[(VehicleId, VehicleId)],
        agreed: &[(VehicleId, VehicleId)],
    ) -> Result<Vec<PrecedencePreference>, BackendError> {
        self.precedences(&build_resolve_prompt(ctx, disputed, agreed), ctx, |p| p.first.min(p.second))
    }

    fn merge(&self, intra: &[PassOrder], ctx: &NegotiationContext) -> Result<Vec<(VehicleId, usize)>, BackendError> {
        match self.ask(&build_merge_prompt(intra, ctx), &ctx.ids()).map_err(|e| self.fail(e))? {
            ParsedReply::Merge(items) => Ok(items),
            ParsedReply::Precedences(_) => Err(self.fail(LlmError::SchemaViolation {
                path: "$".into(),
                message: "expected a merge order".into(),
            })),
        }
    }
}
