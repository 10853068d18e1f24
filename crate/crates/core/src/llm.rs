//! Prompt assembly, chat backends and response parsing.
//!
//! The model is asked to answer with two labeled sections,
//! `Activity name:` and `Activity information:`. The parsed fields become
//! the ranking query; unparseable replies fall back to the raw text.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{HttpError, JsonClient, RetryPolicy};
use crate::model::{BomEntry, Datasheet};

pub const LLM_API_KEY_VAR: &str = "ECOLINK_LLM_API_KEY";
pub const DEFAULT_LLM_ENDPOINT: &str = "http://localhost:11434/v1/chat/completions";
pub const DEFAULT_LLM_MODEL: &str = "llama3.1:8b";
pub const DEFAULT_SEED: u64 = 42;

/// Version tag of the frozen prompt template below.
pub const PROMPT_VERSION: &str = "v1";
const PROMPT_TEMPLATE: &str = include_str!("../resources/prompt_v1.txt");
const DATASHEET_TEMPLATE: &str = include_str!("../resources/datasheet_v1.txt");

const NAME_LABEL: &str = "activity name:";
const INFO_LABEL: &str = "activity information:";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("chat service failed after {attempts} attempt(s): {source}")]
    Transport {
        attempts: u32,
        #[source]
        source: HttpError,
    },
    #[error("chat service response invalid: {0}")]
    Protocol(String),
    #[error("no canned response for prompt sha256 {hash}")]
    FixtureMissing { hash: String },
    #[error("canned fixtures line {line}: {message}")]
    FixtureSyntax { line: usize, message: String },
    #[error("cannot read fixtures {}: {source}", path.display())]
    FixtureIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport { source, .. } if source.is_retryable())
    }
}

/// Single-pass `{{key}}` substitution; substituted values are not rescanned.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(key);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Builds the chat prompt for one component, embedding the datasheet body
/// between markers when one was selected.
pub fn build_prompt(entry: &BomEntry, datasheet: Option<&Datasheet>) -> String {
    let datasheet_block = datasheet
        .map(|d| {
            render(
                DATASHEET_TEMPLATE,
                &[("filename", d.filename.as_str()), ("body", d.body.as_str())],
            )
        })
        .unwrap_or_default();
    render(
        PROMPT_TEMPLATE,
        &[
            ("name", entry.name.as_str()),
            ("supplier", entry.supplier.as_str()),
            ("material", entry.material.as_str()),
            ("datasheet", datasheet_block.as_str()),
        ],
    )
}

/// Lowercase hex SHA-256 of the prompt bytes; the canned-fixture key.
pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// A chat model that turns one prompt into one assistant message.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CannedRecord {
    pub prompt_sha256: String,
    pub response: String,
}

/// Replays responses keyed by prompt hash. Unknown prompts are errors so
/// fixture sets stay complete.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CannedLlm {
    responses: HashMap<String, String>,
}

impl CannedLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_prompt(&mut self, prompt: &str, response: impl Into<String>) {
        self.responses
            .insert(prompt_sha256(prompt), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn from_jsonl(source: &str) -> Result<Self, LlmError> {
        let mut responses = HashMap::new();
        for (i, line) in source.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CannedRecord =
                serde_json::from_str(line).map_err(|e| LlmError::FixtureSyntax {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            responses.insert(rec.prompt_sha256, rec.response);
        }
        Ok(Self { responses })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|source| LlmError::FixtureIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    /// Records sorted by hash, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut keys: Vec<_> = self.responses.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let rec = CannedRecord {
                prompt_sha256: k.clone(),
                response: self.responses[k].clone(),
            };
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string(&rec).expect("record serializes")
            );
        }
        out
    }
}

impl LlmBackend for CannedLlm {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let hash = prompt_sha256(prompt);
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(LlmError::FixtureMissing { hash })
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// Client for a chat-completions style endpoint. Sends temperature 0 and a
/// fixed seed.
#[derive(Debug, Clone)]
pub struct RemoteChat {
    client: JsonClient,
    model: String,
    seed: Option<u64>,
}

impl RemoteChat {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self, LlmError> {
        Self::with_retry(endpoint, model, api_key, RetryPolicy::default())
    }

    pub fn with_retry(
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
        retry: RetryPolicy,
    ) -> Result<Self, LlmError> {
        let client = JsonClient::new(endpoint, api_key, retry, Duration::from_secs(300)).map_err(
            |source| LlmError::Transport {
                attempts: 0,
                source,
            },
        )?;
        Ok(Self {
            client,
            model: model.to_owned(),
            seed: Some(DEFAULT_SEED),
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

impl LlmBackend for RemoteChat {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
            seed: self.seed,
        };
        let resp: ChatResponse = self
            .client
            .post(&body)
            .map_err(|(source, attempts)| LlmError::Transport { attempts, source })?;
        let content = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Protocol("response has no message content".into()))?;
        if content.trim().is_empty() {
            return Err(LlmError::Protocol("empty assistant message".into()));
        }
        Ok(content)
    }
}

/// Serializable chat backend selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LlmBackendDescriptor {
    Remote { endpoint: String, model: String },
    Canned { fixtures: PathBuf },
}

impl Default for LlmBackendDescriptor {
    fn default() -> Self {
        LlmBackendDescriptor::Remote {
            endpoint: DEFAULT_LLM_ENDPOINT.into(),
            model: DEFAULT_LLM_MODEL.into(),
        }
    }
}

impl LlmBackendDescriptor {
    /// Instantiates the backend. Remote credentials come from
    /// `ECOLINK_LLM_API_KEY` when set.
    pub fn build(&self) -> Result<Box<dyn LlmBackend>, LlmError> {
        match self {
            LlmBackendDescriptor::Remote { endpoint, model } => Ok(Box::new(RemoteChat::new(
                endpoint,
                model,
                std::env::var(LLM_API_KEY_VAR).ok(),
            )?)),
            LlmBackendDescriptor::Canned { fixtures } => Ok(Box::new(CannedLlm::load(fixtures)?)),
        }
    }
}

/// Structured view of an assistant reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub activity_name: String,
    pub activity_information: String,
    pub raw: String,
}

fn label_at(line: &str) -> Option<(&'static str, &str)> {
    let trimmed = line.trim_start();
    [NAME_LABEL, INFO_LABEL].into_iter().find_map(|label| {
        trimmed
            .get(..label.len())
            .filter(|p| p.eq_ignore_ascii_case(label))
            .map(|_| (label, &trimmed[label.len()..]))
    })
}

/// Extracts the `Activity name:` / `Activity information:` sections.
///
/// Labels match case-insensitively at the start of a line. The name is the
/// rest of its line; the information runs to the next label or the end.
/// When either label is missing both fields are left empty and only `raw`
/// is meaningful.
pub fn parse_llm_response(raw: &str) -> LlmResponse {
    let mut name: Option<String> = None;
    let mut info: Option<String> = None;
    let mut collecting_info = false;
    for line in raw.lines() {
        match label_at(line) {
            Some((label, rest)) => {
                collecting_info = false;
                if label == NAME_LABEL {
                    if name.is_none() {
                        name = Some(rest.trim().to_owned());
                    }
                } else if info.is_none() {
                    info = Some(rest.to_owned());
                    collecting_info = true;
                }
            }
            None if collecting_info => {
                if let Some(buf) = info.as_mut() {
                    buf.push('\n');
                    buf.push_str(line);
                }
            }
            None => {}
        }
    }
    match (name, info) {
        (Some(name), Some(info)) => LlmResponse {
            activity_name: name,
            activity_information: info.trim().to_owned(),
            raw: raw.to_owned(),
        },
        _ => LlmResponse {
            activity_name: String::new(),
            activity_information: String::new(),
            raw: raw.to_owned(),
        },
    }
}

/// `name + "\n" + information` when parsed, otherwise the raw reply.
pub fn ranking_query_text(resp: &LlmResponse) -> String {
    if resp.activity_name.is_empty() && resp.activity_information.is_empty() {
        resp.raw.clone()
    } else {
        format!("{}\n{}", resp.activity_name, resp.activity_information)
    }
}
