//! ReAct agent substrate shared by the PoC and review agents.
//!
//! Assistant turns act through fenced blocks: ```` ```tool <name> ```` followed
//! by JSON arguments invokes a tool, ```` ```final ```` carries the answer.

mod backend;
mod transcript;

pub use backend::{
    BackendReply, LiveBackend, LiveBackendConfig, LlmBackend, ReplayBackend, ReplayMatching, ScriptBackend,
    StubBackend, DEFAULT_API_KEY_ENV,
};
pub use transcript::{
    estimate_tokens, ChatTurn, Role, TokenCounting, Transcript, TranscriptError, TRANSCRIPT_FORMAT_VERSION,
};

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("backend error: {0}")]
    Backend(String),
    #[error("replay divergence in session {session} at turn {position}: recorded {expected}, got {actual}")]
    ReplayDivergence {
        session: String,
        position: usize,
        expected: String,
        actual: String,
    },
}

/// A failed loop, with everything recorded up to the failure.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{error}")]
pub struct LoopError {
    pub error: AgentError,
    pub partial: Transcript,
}

pub trait Tool: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    /// Tool output on success, an error message to show the model otherwise.
    fn invoke(&self, args: &serde_json::Value) -> Result<String, String>;
}

#[derive(Default)]
pub struct ToolSet {
    tools: BTreeMap<String, Box<dyn Tool>>,
}

impl ToolSet {
    pub fn new() -> Self {
        ToolSet::default()
    }

    pub fn with(mut self, tool: impl Tool + 'static) -> Self {
        self.tools.insert(tool.name().to_string(), Box::new(tool));
        self
    }

    pub fn get(&self, name: &str) -> Option<&dyn Tool> {
        self.tools.get(name).map(|t| t.as_ref())
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    fn describe(&self) -> String {
        let mut s = String::from("Available tools (invoke with ```tool <name>\\n<json args>```):");
        for (name, tool) in &self.tools {
            s.push_str(&format!("\n- {name}: {}", tool.description()));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_steps: usize,
    pub max_tokens: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_steps: 8,
            max_tokens: 32_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    FinalAnswer,
    StepLimit,
    TokenLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub final_payload: Option<String>,
    pub steps_taken: usize,
    pub budget_exhausted: bool,
    pub stop_reason: StopReason,
    /// Tokens beyond `max_tokens` consumed by the last step, if any.
    pub token_overshoot: u64,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Tool { name: String, args: String },
    Final(String),
    None,
}

fn action_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?s)```(?:tool[ \t]+([A-Za-z0-9_.\-]+)|(final))[ \t]*\r?\n(.*?)```").expect("valid regex")
    })
}

/// The first tool or final block in an assistant turn.
pub fn parse_action(text: &str) -> Action {
    match action_regex().captures(text) {
        None => Action::None,
        Some(c) => {
            let body = c.get(3).map_or("", |m| m.as_str()).trim().to_string();
            match c.get(1) {
                Some(name) => Action::Tool {
                    name: name.as_str().to_string(),
                    args: body,
                },
                None => Action::Final(body),
            }
        }
    }
}

const NO_ACTION_NUDGE: &str =
    "No tool invocation or final answer found. Reply with a ```tool <name>``` block or a ```final``` block.";

fn run_tool(tools: &ToolSet, name: &str, args: &str) -> String {
    let Some(tool) = tools.get(name) else {
        return format!("error: unknown tool `{name}`");
    };
    let parsed: serde_json::Value = if args.is_empty() {
        serde_json::Value::Object(Default::default())
    } else {
        match serde_json::from_str(args) {
            Ok(v) => v,
            Err(e) => return format!("error: invalid JSON arguments: {e}"),
        }
    };
    match tool.invoke(&parsed) {
        Ok(out) => out,
        Err(e) => format!("error: {e}"),
    }
}

/// Runs reason/act turns until a final block or budget exhaustion.
pub fn run_react_loop(
    session: &str,
    system_prompt: &str,
    task: &str,
    tools: &ToolSet,
    backend: &dyn LlmBackend,
    budget: Budget,
) -> Result<AgentOutcome, LoopError> {
    let mut transcript = Transcript::new(backend.model_tag(session), backend.token_counting());
    let system = if tools.is_empty() {
        system_prompt.to_string()
    } else {
        format!("{system_prompt}\n\n{}", tools.describe())
    };
    transcript.push(ChatTurn::new(Role::System, system));
    transcript.push(ChatTurn::new(Role::User, task));
    let mut steps = 0;
    let finish = |transcript: Transcript, steps, payload: Option<String>, reason| {
        let overshoot = transcript.total_tokens().saturating_sub(budget.max_tokens);
        AgentOutcome {
            final_payload: payload,
            steps_taken: steps,
            budget_exhausted: reason != StopReason::FinalAnswer,
            stop_reason: reason,
            token_overshoot: overshoot,
            transcript,
        }
    };
    loop {
        if steps >= budget.max_steps {
            return Ok(finish(transcript, steps, None, StopReason::StepLimit));
        }
        if transcript.total_tokens() >= budget.max_tokens {
            return Ok(finish(transcript, steps, None, StopReason::TokenLimit));
        }
        let reply = match backend.complete(session, &transcript.turns) {
            Ok(r) => r,
            Err(error) => {
                return Err(LoopError {
                    error,
                    partial: transcript,
                })
            }
        };
        steps += 1;
        let action = parse_action(&reply.content);
        transcript.push(ChatTurn::new(Role::Assistant, reply.content).with_token_count(reply.completion_tokens));
        match action {
            Action::Final(payload) => {
                return Ok(finish(transcript, steps, Some(payload), StopReason::FinalAnswer));
            }
            Action::Tool { name, args } => {
                let out = run_tool(tools, &name, &args);
                transcript.push(ChatTurn::tool(name, out));
            }
            Action::None => transcript.push(ChatTurn::new(Role::User, NO_ACTION_NUDGE)),
        }
        if transcript.total_tokens() > budget.max_tokens {
            return Ok(finish(transcript, steps, None, StopReason::TokenLimit));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Poc,
    Review,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }

    fn add(&mut self, other: TokenUsage) {
        self.prompt += other.prompt;
        self.completion += other.completion;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub poc: TokenUsage,
    pub review: TokenUsage,
    pub total: TokenUsage,
}

impl UsageSummary {
    pub fn zero() -> Self {
        UsageSummary {
            poc: TokenUsage::default(),
            review: TokenUsage::default(),
            total: TokenUsage::default(),
        }
    }
}

/// Per-stage and grand-total token usage over stage-labelled transcripts.
pub fn meter_tokens<'a>(transcripts: impl IntoIterator<Item = (Stage, &'a Transcript)>) -> UsageSummary {
    let mut s = UsageSummary::zero();
    for (stage, t) in transcripts {
        let u = TokenUsage {
            prompt: t.total_prompt_tokens,
            completion: t.total_completion_tokens,
        };
        match stage {
            Stage::Poc => s.poc.add(u),
            Stage::Review => s.review.add(u),
        }
    }
    s.total = s.poc;
    s.total.add(s.review);
    s
}
