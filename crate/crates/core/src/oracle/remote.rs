//! Chat-completion HTTP backend (`/v1/chat/completions`, `/v1/embeddings`).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatRequest, Completion, EmbedResponse, OracleError, RawProbe, Usage};

pub const API_KEY_ENV: &str = "MMG_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_timeout_secs() -> u64 {
    120
}

pub struct RemoteBackend {
    config: RemoteConfig,
    id: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("config", &self.config).finish_non_exhaustive()
    }
}

enum Failure {
    Transient(String),
    Fatal(OracleError),
}

impl RemoteBackend {
    /// Reads the API key from `MMG_API_KEY` when set.
    pub fn new(config: RemoteConfig) -> Result<Self, OracleError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: RemoteConfig, api_key: Option<String>) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| OracleError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            id: format!("remote:{}", config.chat_model),
            config,
            api_key,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, Failure> {
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Transient(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Transient(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(OracleError::Protocol(format!("HTTP {status}: {text}"))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(OracleError::Protocol(format!("invalid JSON body: {e}"))))
    }

    /// POSTs with exponential backoff on transport errors, 5xx and 429.
    fn post(&self, path: &str, body: &Value) -> Result<(Value, f64), OracleError> {
        let url = self.url(path);
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.post_once(&url, body) {
                Ok(v) => return Ok((v, started.elapsed().as_secs_f64())),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    tracing::warn!(%url, attempt, "backend call failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(OracleError::BackendUnavailable(format!(
            "{url} failed after {} retries: {last}",
            self.config.retries
        )))
    }

    fn chat_body(&self, req: &ChatRequest, logprobs: bool) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.rendered_prompt}));
        let mut body = json!({
            "model": self.config.chat_model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(5);
            body["max_tokens"] = json!(1);
        }
        body
    }
}

fn usage(v: &Value) -> Usage {
    let u = &v["usage"];
    Usage {
        prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
    }
}

fn message_text(v: &Value) -> Result<String, OracleError> {
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| OracleError::Protocol("response has no choices[0].message.content".into()))
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, OracleError> {
        let (v, wall_time) = self.post("/v1/chat/completions", &self.chat_body(req, false))?;
        Ok(Completion {
            text: message_text(&v)?,
            usage: usage(&v),
            wall_time,
        })
    }

    fn probe(&self, req: &ChatRequest) -> Result<RawProbe, OracleError> {
        let (v, wall_time) = self.post("/v1/chat/completions", &self.chat_body(req, true))?;
        let first = &v["choices"][0]["logprobs"]["content"][0];
        let (text, probability) = match (first["token"].as_str(), first["logprob"].as_f64()) {
            (Some(token), Some(lp)) => (token.to_string(), lp.exp().clamp(0.0, 1.0)),
            _ => {
                return Err(OracleError::Protocol(
                    "response has no choices[0].logprobs.content[0] token/logprob".into(),
                ))
            }
        };
        Ok(RawProbe {
            text,
            probability,
            usage: usage(&v),
            wall_time,
        })
    }

    fn embed(&self, text: &str) -> Result<EmbedResponse, OracleError> {
        let body = json!({"model": self.config.embedding_model, "input": text});
        let (v, wall_time) = self.post("/v1/embeddings", &body)?;
        let vector = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| OracleError::Protocol("response has no data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| OracleError::Protocol("non-numeric embedding".into())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EmbedResponse {
            vector,
            usage: usage(&v),
            wall_time,
        })
    }
}
