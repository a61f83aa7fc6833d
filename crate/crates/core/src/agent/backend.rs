//! LLM backends: scripted stub, per-session scripts, transcript replay and a
//! live OpenAI-compatible endpoint.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::transcript::{estimate_tokens, ChatTurn, Role, TokenCounting, Transcript};
use super::AgentError;

pub const DEFAULT_API_KEY_ENV: &str = "SINKTRACE_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub content: String,
    pub completion_tokens: u64,
}

impl BackendReply {
    pub fn estimated(content: impl Into<String>) -> Self {
        let content = content.into();
        BackendReply {
            completion_tokens: estimate_tokens(&content),
            content,
        }
    }
}

/// A chat model. `session` names the agent run (one per advisory or flow) so
/// recorded backends can find the matching script or transcript.
pub trait LlmBackend: Send + Sync {
    fn model_tag(&self, session: &str) -> String;

    fn token_counting(&self) -> TokenCounting {
        TokenCounting::Estimated
    }

    fn complete(&self, session: &str, conversation: &[ChatTurn]) -> Result<BackendReply, AgentError>;
}

fn assistant_turns(conversation: &[ChatTurn]) -> usize {
    conversation.iter().filter(|t| t.role == Role::Assistant).count()
}

/// Returns `responses[i]` on the i-th call of a session, repeating the last
/// response once the list is exhausted.
#[derive(Debug, Clone)]
pub struct StubBackend {
    responses: Vec<String>,
}

impl StubBackend {
    pub fn new(responses: Vec<String>) -> Self {
        StubBackend { responses }
    }

    /// Answers every prompt with an empty final payload.
    pub fn empty_final() -> Self {
        StubBackend::new(vec!["```final\n```".to_string()])
    }
}

impl LlmBackend for StubBackend {
    fn model_tag(&self, _session: &str) -> String {
        "stub".to_string()
    }

    fn complete(&self, _session: &str, conversation: &[ChatTurn]) -> Result<BackendReply, AgentError> {
        let i = assistant_turns(conversation);
        let text = self
            .responses
            .get(i)
            .or(self.responses.last())
            .cloned()
            .unwrap_or_default();
        Ok(BackendReply::estimated(text))
    }
}

/// Per-session scripts: `<dir>/<session>.json` holds a JSON array of
/// assistant responses, served in order.
#[derive(Debug, Clone)]
pub struct ScriptBackend {
    dir: PathBuf,
}

impl ScriptBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ScriptBackend { dir: dir.into() }
    }
}

impl LlmBackend for ScriptBackend {
    fn model_tag(&self, _session: &str) -> String {
        "script".to_string()
    }

    fn complete(&self, session: &str, conversation: &[ChatTurn]) -> Result<BackendReply, AgentError> {
        let path = self.dir.join(format!("{session}.json"));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| AgentError::Backend(format!("script {}: {e}", path.display())))?;
        let responses: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| AgentError::Backend(format!("script {}: {e}", path.display())))?;
        let i = assistant_turns(conversation);
        responses
            .get(i)
            .map(BackendReply::estimated)
            .ok_or_else(|| AgentError::Backend(format!("script {} has no response #{}", path.display(), i + 1)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMatching {
    /// Role sequence and tool names only.
    #[default]
    Structure,
    /// Full turn text as well.
    Strict,
}

/// Replays recorded transcripts `<dir>/<session>.jsonl`. Each prompt must
/// match the recorded prefix; the next recorded assistant turn is returned
/// with its recorded token count.
pub struct ReplayBackend {
    dir: PathBuf,
    matching: ReplayMatching,
    cache: Mutex<HashMap<String, Arc<Transcript>>>,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>, matching: ReplayMatching) -> Self {
        ReplayBackend {
            dir: dir.into(),
            matching,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn recorded(&self, session: &str) -> Result<Arc<Transcript>, AgentError> {
        if let Some(t) = self.cache.lock().expect("replay cache poisoned").get(session) {
            return Ok(t.clone());
        }
        let path = self.dir.join(format!("{session}.jsonl"));
        let t = Arc::new(Transcript::load(&path).map_err(|e| AgentError::Backend(e.to_string()))?);
        self.cache
            .lock()
            .expect("replay cache poisoned")
            .insert(session.to_string(), t.clone());
        Ok(t)
    }
}

impl LlmBackend for ReplayBackend {
    fn model_tag(&self, session: &str) -> String {
        self.recorded(session)
            .map(|t| t.model_tag.clone())
            .unwrap_or_else(|_| "replay".to_string())
    }

    fn token_counting(&self) -> TokenCounting {
        TokenCounting::Estimated
    }

    fn complete(&self, session: &str, conversation: &[ChatTurn]) -> Result<BackendReply, AgentError> {
        let rec = self.recorded(session)?;
        let n = conversation.len();
        let diverged = |expected: String, actual: String| AgentError::ReplayDivergence {
            session: session.to_string(),
            position: n,
            expected,
            actual,
        };
        if rec.turns.len() <= n {
            return Err(diverged(
                format!("transcript ends after {} turns", rec.turns.len()),
                format!("prompt with {n} turns"),
            ));
        }
        let prefix = &rec.turns[..n];
        let (expected, actual) = match self.matching {
            ReplayMatching::Structure => (Transcript::structure_digest(prefix), Transcript::structure_digest(conversation)),
            ReplayMatching::Strict => (Transcript::strict_digest(prefix), Transcript::strict_digest(conversation)),
        };
        if expected != actual {
            return Err(diverged(expected, actual));
        }
        let next = &rec.turns[n];
        if next.role != Role::Assistant {
            return Err(diverged(format!("{} turn", next.role.as_str()), "assistant turn".to_string()));
        }
        Ok(BackendReply {
            content: next.content.clone(),
            completion_tokens: next.token_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveBackendConfig {
    /// Base URL of an OpenAI-compatible API (the client appends `/chat/completions`).
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_timeout() -> u64 {
    120
}

pub struct LiveBackend {
    config: LiveBackendConfig,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(config: LiveBackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        LiveBackend { config, agent }
    }
}

impl LlmBackend for LiveBackend {
    fn model_tag(&self, _session: &str) -> String {
        format!("live:{}", self.config.model)
    }

    fn token_counting(&self) -> TokenCounting {
        TokenCounting::Provider
    }

    fn complete(&self, _session: &str, conversation: &[ChatTurn]) -> Result<BackendReply, AgentError> {
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| AgentError::Backend(format!("environment variable {} is not set", self.config.api_key_env)))?;
        let messages: Vec<_> = conversation
            .iter()
            .map(|t| match t.role {
                Role::Tool => json!({
                    "role": "user",
                    "content": format!("Tool `{}` returned:\n{}", t.tool_name.as_deref().unwrap_or(""), t.content),
                }),
                r => json!({"role": r.as_str(), "content": t.content}),
            })
            .collect();
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let body: serde_json::Value = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(json!({"model": self.config.model, "messages": messages}))
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| AgentError::Backend(format!("{url}: {e}")))?;
        let content = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| AgentError::Backend(format!("{url}: response has no message content")))?
            .to_string();
        let completion_tokens = body["usage"]["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(&content));
        Ok(BackendReply {
            content,
            completion_tokens,
        })
    }
}
