//! Chat-completion and text-embedding providers.
//!
//! The engine only depends on the two traits here. Real HTTP clients live in
//! [`http`]; deterministic offline mocks (a scripted responder, a
//! prompt-seeded expression mutator, and a feature-hashing embedder) live in
//! [`mock`]. Mock providers are pure functions of `(seed, input)`, so a
//! mining run against them is bit-reproducible.
//!
//! Every call can be logged to an append-only JSON-lines run log via the
//! [`LoggedChat`] / [`LoggedEmbedder`] wrappers.

pub mod http;
pub mod mock;

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::util::{sha256_hex, JsonlWriter};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("http status {status}: {message}")]
    Http { status: u16, message: String },
    #[error("provider configuration error: {0}")]
    Config(String),
    #[error("embedding input must be non-empty")]
    EmptyInput,
    #[error("embedding vector has zero norm")]
    ZeroVector,
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("no parseable JSON after {attempts} attempt(s)")]
    GenerationFailure { attempts: usize },
}

impl ProviderError {
    /// Transient failures worth retrying with backoff.
    pub fn is_retriable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

/// Raw provider text plus the strict-JSON view of it, when one exists.
/// The raw text is always preserved verbatim for logging.
#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub raw: String,
    pub json: Option<serde_json::Value>,
}

impl ChatResponse {
    pub fn from_raw(raw: String) -> Self {
        let stripped = strip_code_fences(&raw);
        let json = serde_json::from_str(stripped).ok();
        Self { raw, json }
    }
}

/// The prompts demand bare JSON but providers sometimes fence it anyway;
/// remove a leading ```/```json line and a trailing ``` line.
pub fn strip_code_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let body = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => rest,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
    fn name(&self) -> &'static str {
        "chat"
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
    fn name(&self) -> &'static str {
        "embed"
    }
}

impl ChatProvider for Box<dyn ChatProvider> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat(request)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

impl EmbeddingProvider for Box<dyn EmbeddingProvider> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed(text)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

/// Unit-normalized embedding; cosine similarity is a plain dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 || norm.is_nan() || norm.is_infinite() {
            return Err(ProviderError::ZeroVector);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Call `chat` until a strict-JSON body arrives, re-asking with the same
/// prompt up to `attempts` times; transport errors propagate immediately
/// (the HTTP client retries those internally).
pub fn chat_json(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    attempts: usize,
) -> Result<(serde_json::Value, String), ProviderError> {
    let attempts = attempts.max(1);
    for _ in 0..attempts {
        let resp = provider.chat(request)?;
        if let Some(json) = resp.json {
            return Ok((json, resp.raw));
        }
        log::debug!("unparseable provider response, re-asking: {:.120}", resp.raw);
    }
    Err(ProviderError::GenerationFailure { attempts })
}

/// One line per provider call in the run log.
#[derive(Debug, Serialize)]
struct CallRecord<'a> {
    kind: &'static str,
    request_sha256: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    latency_ms: u64,
}

pub struct LoggedChat<P> {
    inner: P,
    log: Arc<JsonlWriter>,
}

impl<P: ChatProvider> LoggedChat<P> {
    pub fn new(inner: P, log: Arc<JsonlWriter>) -> Self {
        Self { inner, log }
    }
}

impl<P: ChatProvider> ChatProvider for LoggedChat<P> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let started = Instant::now();
        let result = self.inner.chat(request);
        let latency_ms = started.elapsed().as_millis() as u64;
        let request_sha256 =
            sha256_hex(format!("{}\n{}", request.system, request.user).as_bytes());
        self.log.append(&CallRecord {
            kind: "chat",
            request_sha256,
            ok: result.is_ok(),
            response: result.as_ref().ok().map(|r| r.raw.as_str()),
            response_dim: None,
            error: result.as_ref().err().map(ToString::to_string),
            latency_ms,
        });
        result
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

pub struct LoggedEmbedder<P> {
    inner: P,
    log: Arc<JsonlWriter>,
}

impl<P: EmbeddingProvider> LoggedEmbedder<P> {
    pub fn new(inner: P, log: Arc<JsonlWriter>) -> Self {
        Self { inner, log }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for LoggedEmbedder<P> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let started = Instant::now();
        let result = self.inner.embed(text);
        let latency_ms = started.elapsed().as_millis() as u64;
        self.log.append(&CallRecord {
            kind: "embed",
            request_sha256: sha256_hex(text.as_bytes()),
            ok: result.is_ok(),
            response: None,
            response_dim: result.as_ref().ok().map(EmbeddingVector::dim),
            error: result.as_ref().err().map(ToString::to_string),
            latency_ms,
        });
        result
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}
