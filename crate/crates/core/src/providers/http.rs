//! Blocking HTTP clients for OpenAI-compatible chat-completion and embedding
//! endpoints. Transport failures and 429/5xx responses are retried with
//! exponential backoff; the JSON re-ask policy lives one level up in
//! [`super::chat_json`].

use std::time::Duration;

use serde_json::json;

use super::{ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, EmbeddingVector, ProviderError};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    pub transport_retries: usize,
}

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Config(e.to_string()))
}

fn post_with_retries(
    client: &reqwest::blocking::Client,
    cfg: &HttpConfig,
    path: &str,
    body: &serde_json::Value,
) -> Result<serde_json::Value, ProviderError> {
    let url = format!("{}/{}", cfg.endpoint.trim_end_matches('/'), path);
    let mut delay = Duration::from_millis(250);
    let attempts = cfg.transport_retries.max(1);
    let mut last_err = ProviderError::Transport("no attempt made".into());
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(delay);
            delay *= 2;
        }
        let sent = client
            .post(&url)
            .bearer_auth(&cfg.api_key)
            .json(body)
            .send();
        match sent {
            Err(e) => last_err = ProviderError::Transport(e.to_string()),
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp
                        .json::<serde_json::Value>()
                        .map_err(|e| ProviderError::MalformedResponse(e.to_string()));
                }
                let message = resp.text().unwrap_or_default();
                let err = ProviderError::Http {
                    status: status.as_u16(),
                    message,
                };
                if !err.is_retriable() {
                    return Err(err);
                }
                last_err = err;
            }
        }
    }
    Err(last_err)
}

/// `POST {endpoint}/chat/completions` with system+user messages.
pub struct HttpChatClient {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(cfg: HttpConfig) -> Result<Self, ProviderError> {
        let client = client(cfg.timeout)?;
        Ok(Self { cfg, client })
    }
}

impl ChatProvider for HttpChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
        });
        if let Some(max_tokens) = request.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        let value = post_with_retries(&self.client, &self.cfg, "chat/completions", &body)?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                ProviderError::MalformedResponse("missing choices[0].message.content".into())
            })?;
        Ok(ChatResponse::from_raw(content.to_string()))
    }

    fn name(&self) -> &'static str {
        "http-chat"
    }
}

/// `POST {endpoint}/embeddings`; the returned vector is L2-normalized here.
pub struct HttpEmbeddingClient {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingClient {
    pub fn new(cfg: HttpConfig) -> Result<Self, ProviderError> {
        let client = client(cfg.timeout)?;
        Ok(Self { cfg, client })
    }
}

impl EmbeddingProvider for HttpEmbeddingClient {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let body = json!({
            "model": self.cfg.model,
            "input": [text],
        });
        let value = post_with_retries(&self.client, &self.cfg, "embeddings", &body)?;
        let raw = value["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| ProviderError::MalformedResponse("missing data[0].embedding".into()))?;
        let mut values = Vec::with_capacity(raw.len());
        for v in raw {
            values.push(v.as_f64().ok_or_else(|| {
                ProviderError::MalformedResponse("non-numeric embedding entry".into())
            })?);
        }
        EmbeddingVector::new(values)
    }

    fn name(&self) -> &'static str {
        "http-embed"
    }
}
