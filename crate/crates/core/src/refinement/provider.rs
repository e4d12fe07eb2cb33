//! Generation providers: live HTTP chat, transcript replay, and scripted.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::estimate_tokens;

pub const API_BASE_ENV: &str = "EFFIPAIR_API_BASE";
pub const API_KEY_ENV: &str = "EFFIPAIR_API_KEY";
pub const MODEL_ENV: &str = "EFFIPAIR_MODEL";

/// `base + 1_000_000 * sample + 1000 * round + task_index`.
///
/// Injective while `task_index < 1000` and `round < 1000`.
pub fn derive_seed(base: u64, round: u32, task_index: usize, sample: u32) -> u64 {
    base + 1_000_000 * u64::from(sample) + 1000 * u64::from(round) + task_index as u64
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub task_id: String,
    pub round: u32,
    pub sample: u32,
    pub seed: u64,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("no recorded response for task `{task_id}` (seed {seed}, prompt {prompt_hash})")]
    MissingTranscript { task_id: String, seed: u64, prompt_hash: String },
    #[error("no scripted response for task `{task_id}` round {round} sample {sample}")]
    MissingScript { task_id: String, round: u32, sample: u32 },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("transcript: {0}")]
    Transcript(String),
}

pub trait GenerationProvider: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, req: &GenerationRequest) -> Result<Completion, ProviderError>;

    /// Whether `complete_batch` submits requests together.
    fn supports_batch(&self) -> bool {
        false
    }

    fn complete_batch(&self, reqs: &[GenerationRequest]) -> Vec<Result<Completion, ProviderError>> {
        reqs.iter().map(|r| self.complete(r)).collect()
    }
}

/// One provider call as written to, and replayed from, a transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub task_id: String,
    pub round: u32,
    pub sample: u32,
    pub seed: u64,
    pub provider_id: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, ProviderError> {
    let text = fs::read_to_string(path).map_err(|e| ProviderError::Transcript(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| ProviderError::Transcript(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Serves recorded responses keyed by (prompt hash, seed).
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    id: String,
    records: HashMap<(String, u64), TranscriptRecord>,
}

impl ReplayProvider {
    pub fn new(records: Vec<TranscriptRecord>) -> Self {
        let id = records.first().map_or_else(|| "replay".to_string(), |r| format!("replay:{}", r.provider_id));
        let records = records.into_iter().map(|r| ((r.prompt_hash.clone(), r.seed), r)).collect();
        Self { id, records }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(read_transcript(path)?))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl GenerationProvider for ReplayProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &GenerationRequest) -> Result<Completion, ProviderError> {
        let hash = prompt_hash(&req.prompt);
        let rec = self.records.get(&(hash.clone(), req.seed)).ok_or_else(|| ProviderError::MissingTranscript {
            task_id: req.task_id.clone(),
            seed: req.seed,
            prompt_hash: hash,
        })?;
        Ok(Completion {
            text: rec.response.clone(),
            prompt_tokens: rec.prompt_tokens,
            completion_tokens: rec.completion_tokens,
        })
    }

    fn supports_batch(&self) -> bool {
        true
    }
}

/// Fixed responses keyed by (task, round, sample); token counts are estimated.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedProvider {
    /// `responses[task_id][round][sample]`.
    pub responses: HashMap<String, Vec<Vec<String>>>,
}

impl ScriptedProvider {
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path).map_err(|e| ProviderError::Transcript(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ProviderError::Transcript(format!("{}: {e}", path.display())))
    }
}

impl GenerationProvider for ScriptedProvider {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &GenerationRequest) -> Result<Completion, ProviderError> {
        let text = self
            .responses
            .get(&req.task_id)
            .and_then(|rounds| rounds.get(req.round as usize))
            .and_then(|samples| samples.get(req.sample as usize))
            .ok_or_else(|| ProviderError::MissingScript {
                task_id: req.task_id.clone(),
                round: req.round,
                sample: req.sample,
            })?;
        Ok(Completion {
            text: text.clone(),
            prompt_tokens: estimate_tokens(&req.prompt),
            completion_tokens: estimate_tokens(text),
        })
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatProvider {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    temperature: f64,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(base_url: &str, api_key: Option<String>, model: &str) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(Self {
            id: format!("http:{model}"),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            model: model.to_string(),
            temperature: 0.7,
            client,
        })
    }

    /// Reads `EFFIPAIR_API_BASE`, `EFFIPAIR_API_KEY`, and `EFFIPAIR_MODEL`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let base = std::env::var(API_BASE_ENV)
            .map_err(|_| ProviderError::Unavailable(format!("{API_BASE_ENV} is not set")))?;
        let model = std::env::var(MODEL_ENV).map_err(|_| ProviderError::Unavailable(format!("{MODEL_ENV} is not set")))?;
        Self::new(&base, std::env::var(API_KEY_ENV).ok(), &model)
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl GenerationProvider for HttpChatProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &GenerationRequest) -> Result<Completion, ProviderError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": req.prompt }],
            "temperature": self.temperature,
            "seed": req.seed,
        });
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp: ChatResponse = call
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?
            .json()
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::BadResponse("no message content".into()))?;
        let (prompt_tokens, completion_tokens) = match resp.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (estimate_tokens(&req.prompt), estimate_tokens(&text)),
        };
        Ok(Completion { text, prompt_tokens, completion_tokens })
    }
}
