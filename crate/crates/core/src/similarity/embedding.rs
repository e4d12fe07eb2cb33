//! Embedding providers and the content-addressed embedding cache.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ast::strip_comment_lines;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("embedding cache: {0}")]
    Cache(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, source: &str) -> Result<Vec<f64>, EmbeddingError>;
}

/// Offline embedder: signed feature hashing of every token n-gram of
/// length 1 through `n`.
///
/// Short grams keep lexical overlap visible when a single line changes.
/// Stable across processes and platforms (FNV-1a, no random state).
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    id: String,
    dimension: usize,
    n: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self::new(512, 3)
    }
}

impl HashedNgramEmbedder {
    pub fn new(dimension: usize, n: usize) -> Self {
        assert!(dimension > 0 && n > 0, "dimension and n must be positive");
        Self { id: format!("hashed-ngram-1to{n}x{dimension}"), dimension, n }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Identifier/number runs and single punctuation characters.
pub fn code_tokens(source: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in source.char_indices() {
        let word = ch.is_alphanumeric() || ch == '_';
        match (word, start) {
            (true, None) => start = Some(i),
            (true, Some(_)) => {}
            (false, s) => {
                if let Some(s) = s {
                    tokens.push(&source[s..i]);
                    start = None;
                }
                if !ch.is_whitespace() {
                    tokens.push(&source[i..i + ch.len_utf8()]);
                }
            }
        }
    }
    if let Some(s) = start {
        tokens.push(&source[s..]);
    }
    tokens
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, source: &str) -> Result<Vec<f64>, EmbeddingError> {
        let tokens = code_tokens(source);
        let mut values = vec![0.0; self.dimension];
        let mut add = |gram: &[&str]| {
            let h = fnv1a(gram.join("\u{1f}").as_bytes());
            let idx = (h % self.dimension as u64) as usize;
            values[idx] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        };
        for n in 1..=self.n {
            tokens.windows(n).for_each(&mut add);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(values)
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbeddingProvider {
    id: String,
    endpoint: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        model: &str,
        dimension: usize,
    ) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            id: format!("http:{model}"),
            endpoint: format!("{}/embeddings", base_url.trim_end_matches('/')),
            api_key,
            model: model.to_string(),
            dimension,
            client,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, source: &str) -> Result<Vec<f64>, EmbeddingError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "model": self.model, "input": source }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let unavailable = |e: reqwest::Error| EmbeddingError::ProviderUnavailable(e.to_string());
        let resp: EmbeddingsResponse =
            req.send().and_then(|r| r.error_for_status()).and_then(|r| r.json()).map_err(unavailable)?;
        resp.data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| EmbeddingError::ProviderUnavailable("empty embedding response".into()))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    values: Vec<f64>,
}

/// Content-hash keyed embedding store, optionally backed by a JSONL file.
///
/// Reads take a shared lock; inserts (and file appends) are serialized.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<String, Vec<f64>>>,
    path: Option<PathBuf>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a file-backed cache. A missing file is an empty cache.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| EmbeddingError::Cache(e.to_string()))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let rec: CacheLine =
                    serde_json::from_str(line).map_err(|e| EmbeddingError::Cache(e.to_string()))?;
                entries.insert(rec.key, rec.values);
            }
        }
        Ok(Self { entries: RwLock::new(entries), path: Some(path) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn key(provider_id: &str, source: &str) -> String {
        let mut h = Sha256::new();
        h.update(provider_id.as_bytes());
        h.update([0u8]);
        h.update(source.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.entries.read().expect("embedding cache lock poisoned").get(key).cloned()
    }

    pub fn insert(&self, key: String, values: Vec<f64>) -> Result<(), EmbeddingError> {
        let mut guard = self.entries.write().expect("embedding cache lock poisoned");
        if guard.contains_key(&key) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&CacheLine { key: key.clone(), values: values.clone() })
                .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| EmbeddingError::Cache(e.to_string()))?;
        }
        guard.insert(key, values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("embedding cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cache-first embedding front end used by the refinement loop.
pub struct Embedder {
    provider: Option<Arc<dyn EmbeddingProvider>>,
    provider_id: String,
    dimension: usize,
    cache: EmbeddingCache,
    preprocess: bool,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, cache: EmbeddingCache) -> Self {
        Self {
            provider_id: provider.id().to_string(),
            dimension: provider.dimension(),
            provider: Some(provider),
            cache,
            preprocess: false,
        }
    }

    /// Serves only what the cache already holds.
    pub fn replay_only(provider_id: &str, dimension: usize, cache: EmbeddingCache) -> Self {
        Self { provider: None, provider_id: provider_id.to_string(), dimension, cache, preprocess: false }
    }

    /// Embed comment-stripped source instead of raw source.
    pub fn with_preprocessing(mut self, on: bool) -> Self {
        self.preprocess = on;
        self
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn embed(&self, source: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let text = if self.preprocess { strip_comment_lines(source) } else { source.to_string() };
        let key = EmbeddingCache::key(&self.provider_id, &text);
        let values = match self.cache.get(&key) {
            Some(v) => v,
            None => {
                let provider = self.provider.as_ref().ok_or_else(|| {
                    EmbeddingError::ProviderUnavailable(format!(
                        "no provider and no cached embedding for {}",
                        &key[..12]
                    ))
                })?;
                let v = provider.embed(&text)?;
                self.cache.insert(key, v.clone())?;
                v
            }
        };
        if values.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dimension, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector { values, provider_id: self.provider_id.clone() })
    }
}
