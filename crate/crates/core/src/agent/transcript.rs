//! Chat turns, transcripts and their JSON-lines file format.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TRANSCRIPT_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// Whether token counts come from the provider or the whitespace estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenCounting {
    #[default]
    Estimated,
    Provider,
}

/// Whitespace-token estimate used by every non-live backend.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    pub token_count: u64,
}

impl ChatTurn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        let content = content.into();
        ChatTurn {
            token_count: estimate_tokens(&content),
            role,
            content,
            tool_name: None,
        }
    }

    pub fn tool(name: impl Into<String>, content: impl Into<String>) -> Self {
        ChatTurn {
            tool_name: Some(name.into()),
            ..ChatTurn::new(Role::Tool, content)
        }
    }

    pub fn with_token_count(mut self, count: u64) -> Self {
        self.token_count = count;
        self
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot access transcript {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("transcript {path} line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format_version: String,
    model_tag: String,
    #[serde(default)]
    token_counting: TokenCounting,
}

/// Ordered turns with running prompt/completion totals. Assistant turns are
/// completion tokens; every other role counts as prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub model_tag: String,
    pub token_counting: TokenCounting,
    pub turns: Vec<ChatTurn>,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
}

impl Transcript {
    pub fn new(model_tag: impl Into<String>, token_counting: TokenCounting) -> Self {
        Transcript {
            model_tag: model_tag.into(),
            token_counting,
            turns: Vec::new(),
            total_prompt_tokens: 0,
            total_completion_tokens: 0,
        }
    }

    pub fn push(&mut self, turn: ChatTurn) {
        if turn.role == Role::Assistant {
            self.total_completion_tokens += turn.token_count;
        } else {
            self.total_prompt_tokens += turn.token_count;
        }
        self.turns.push(turn);
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_prompt_tokens + self.total_completion_tokens
    }

    /// Digest of the role sequence and tool names of the first `len` turns;
    /// insensitive to turn text.
    pub fn structure_digest(turns: &[ChatTurn]) -> String {
        let mut h = Sha256::new();
        for t in turns {
            h.update(t.role.as_str().as_bytes());
            h.update([0u8]);
            h.update(t.tool_name.as_deref().unwrap_or("").as_bytes());
            h.update([1u8]);
        }
        hex::encode(h.finalize())
    }

    /// Digest over roles, tool names and full text.
    pub fn strict_digest(turns: &[ChatTurn]) -> String {
        let mut h = Sha256::new();
        for t in turns {
            let line = serde_json::to_string(&(t.role, &t.tool_name, &t.content)).expect("turn serializes");
            h.update(line.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format_version: TRANSCRIPT_FORMAT_VERSION.to_string(),
            model_tag: self.model_tag.clone(),
            token_counting: self.token_counting,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for t in &self.turns {
            out.push_str(&serde_json::to_string(t).expect("turn serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TranscriptError> {
        let path = path.as_ref();
        let io = |source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Transcript, TranscriptError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let fmt = |line: usize, message: String| TranscriptError::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = BufReader::new(f).lines().enumerate();
        let header: Header = match lines.next() {
            None => return Err(fmt(1, "missing header line".into())),
            Some((_, l)) => {
                let l = l.map_err(|source| TranscriptError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&l).map_err(|e| fmt(1, e.to_string()))?
            }
        };
        if header.format_version != TRANSCRIPT_FORMAT_VERSION {
            return Err(fmt(1, format!("unsupported format_version {:?}", header.format_version)));
        }
        let mut t = Transcript::new(header.model_tag, header.token_counting);
        for (i, l) in lines {
            let l = l.map_err(|source| TranscriptError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if l.trim().is_empty() {
                continue;
            }
            let turn: ChatTurn = serde_json::from_str(&l).map_err(|e| fmt(i + 1, e.to_string()))?;
            if (turn.role == Role::Tool) != turn.tool_name.is_some() {
                return Err(fmt(i + 1, "tool_name must be present exactly on tool turns".into()));
            }
            t.push(turn);
        }
        Ok(t)
    }
}
