//! Chat-completions client with retries, an append-only transcript and a
//! replay cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use dkg_core::prompt::{sha256_hex, PromptBundle};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Semaphore;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// How the prompt is split into chat messages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageLayout {
    /// The whole assembled prompt as one user message.
    #[default]
    SingleUser,
    /// Common ground as the system message, the rest as the user message.
    SystemUser,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// First backoff delay; doubles after each retry.
    pub backoff_ms: u64,
    pub concurrency: usize,
    pub layout: MessageLayout,
    pub api_key_env: String,
}

impl ModelConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ModelConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.2,
            max_tokens: 512,
            timeout_secs: 120,
            max_retries: 4,
            backoff_ms: 500,
            concurrency: 4,
            layout: MessageLayout::SingleUser,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ClientError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::Config("max_tokens must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(ClientError::Config("concurrency must be positive".into()));
        }
        if self.model.trim().is_empty() {
            return Err(ClientError::Config("model name is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub raw_text: String,
    pub model: String,
    pub latency_ms: u64,
    pub usage: Option<Usage>,
    pub timestamp: DateTime<Utc>,
    pub prompt_hash: String,
    pub retries: u32,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("endpoint rejected the credentials (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("server error HTTP {status} after {attempts} attempts")]
    ServerError { status: u16, attempts: u32 },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed server reply: {0}")]
    MalformedServerReply(String),
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("transcript {path}: {source}")]
    Transcript {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ClientError {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientError::Config(_) => "config",
            ClientError::Auth { .. } => "auth",
            ClientError::RateLimited { .. } => "rate_limited",
            ClientError::Timeout { .. } => "timeout",
            ClientError::ServerError { .. } => "server_error",
            ClientError::Rejected { .. } => "rejected",
            ClientError::MalformedServerReply(_) => "malformed_server_reply",
            ClientError::Transport { .. } => "transport",
            ClientError::Transcript { .. } => "transcript",
        }
    }
}

/// Which response a call is for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallMeta {
    pub scenario_id: String,
    pub subject: String,
    pub seed: Option<u64>,
}

/// One line of the transcript file. Failed calls are kept with `error` set
/// and no completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub cache_key: String,
    pub scenario_id: String,
    pub subject: String,
    pub variant: String,
    pub seed: Option<u64>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub completion: Option<Completion>,
    pub error: Option<String>,
}

/// Key of the replay cache.
pub fn cache_key(prompt_hash: &str, cfg: &ModelConfig, seed: Option<u64>) -> String {
    let material = json!({
        "prompt_hash": prompt_hash,
        "model": cfg.model,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "seed": seed,
    });
    sha256_hex(&material.to_string())
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, ClientError> {
    let io = |source| ClientError::Transcript {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", i + 1),
            ))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Append-only JSON-lines file; writes are serialized.
#[derive(Debug)]
pub struct Transcript {
    path: PathBuf,
    file: Mutex<File>,
}

impl Transcript {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| ClientError::Transcript {
                path: path.clone(),
                source,
            })?;
        Ok(Transcript {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, rec: &TranscriptRecord) -> Result<(), ClientError> {
        let mut line = serde_json::to_string(rec).expect("transcript record serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("transcript lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| ClientError::Transcript {
                path: self.path.clone(),
                source,
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CallOutcome {
    pub completion: Completion,
    /// Served from the replay cache without a request.
    pub cached: bool,
}

enum Attempt {
    Done(Completion),
    Retry(ClientError),
    Fail(ClientError),
}

pub struct LlmClient {
    http: reqwest::Client,
    cfg: ModelConfig,
    api_key: Option<String>,
    permits: Semaphore,
    transcript: Option<Transcript>,
    cache: Mutex<HashMap<String, Completion>>,
}

impl LlmClient {
    /// Successful records already in the transcript seed the replay cache.
    pub fn new(cfg: ModelConfig, transcript: Option<Transcript>) -> Result<Self, ClientError> {
        cfg.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        let mut cache = HashMap::new();
        if let Some(t) = &transcript {
            for rec in read_transcript(t.path())? {
                if let Some(c) = rec.completion {
                    cache.insert(rec.cache_key, c);
                }
            }
        }
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(LlmClient {
            http,
            permits: Semaphore::new(cfg.concurrency),
            cfg,
            api_key,
            transcript,
            cache: Mutex::new(cache),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn request_body(&self, prompt: &PromptBundle, seed: Option<u64>) -> Value {
        let messages = match self.cfg.layout {
            MessageLayout::SingleUser => json!([{ "role": "user", "content": prompt.assembled }]),
            MessageLayout::SystemUser => {
                let rest = [prompt.demonstrations.as_str(), &prompt.response_generation].join("\n\n");
                json!([
                    { "role": "system", "content": prompt.common_ground },
                    { "role": "user", "content": rest },
                ])
            }
        };
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        });
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        body
    }

    /// One logical call. A cache hit returns without network I/O and leaves
    /// the transcript alone; otherwise exactly one record is appended, even
    /// when the call fails.
    pub async fn complete(&self, prompt: &PromptBundle, meta: &CallMeta) -> Result<CallOutcome, ClientError> {
        let key = cache_key(&prompt.content_hash, &self.cfg, meta.seed);
        if let Some(c) = self.cache.lock().expect("cache lock").get(&key).cloned() {
            return Ok(CallOutcome {
                completion: c,
                cached: true,
            });
        }
        let result = {
            let _permit = self.permits.acquire().await.expect("semaphore open");
            self.request_with_retries(prompt, meta.seed).await
        };
        if let Some(t) = &self.transcript {
            t.append(&TranscriptRecord {
                cache_key: key.clone(),
                scenario_id: meta.scenario_id.clone(),
                subject: meta.subject.clone(),
                variant: prompt.variant.name().to_string(),
                seed: meta.seed,
                model: self.cfg.model.clone(),
                temperature: self.cfg.temperature,
                max_tokens: self.cfg.max_tokens,
                completion: result.as_ref().ok().cloned(),
                error: result.as_ref().err().map(|e| e.to_string()),
            })?;
        }
        let completion = result?;
        self.cache.lock().expect("cache lock").insert(key, completion.clone());
        Ok(CallOutcome {
            completion,
            cached: false,
        })
    }

    async fn request_with_retries(&self, prompt: &PromptBundle, seed: Option<u64>) -> Result<Completion, ClientError> {
        let body = self.request_body(prompt, seed);
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut retries = 0;
        loop {
            match self.attempt(&body, &prompt.content_hash, retries).await {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if retries >= self.cfg.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    tracing::warn!(error = %e, retry = retries + 1, "transient failure, backing off");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    retries += 1;
                }
            }
        }
    }

    async fn attempt(&self, body: &Value, prompt_hash: &str, retries: u32) -> Attempt {
        let attempts = retries + 1;
        let mut req = self.http.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(ClientError::Timeout { attempts }),
            Err(e) => {
                return Attempt::Retry(ClientError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(ClientError::Timeout { attempts }),
            Err(e) => {
                return Attempt::Retry(ClientError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(ClientError::Auth { status }),
            429 => return Attempt::Retry(ClientError::RateLimited { attempts }),
            408 => return Attempt::Retry(ClientError::Timeout { attempts }),
            500..=599 => return Attempt::Retry(ClientError::ServerError { status, attempts }),
            _ => return Attempt::Fail(ClientError::Rejected { status, body: text }),
        }
        let latency_ms = started.elapsed().as_millis() as u64;
        match parse_reply(&text) {
            Ok((raw_text, model, usage)) => Attempt::Done(Completion {
                raw_text,
                model: model.unwrap_or_else(|| self.cfg.model.clone()),
                latency_ms,
                usage,
                timestamp: Utc::now(),
                prompt_hash: prompt_hash.to_string(),
                retries,
            }),
            Err(e) => Attempt::Fail(e),
        }
    }
}

fn parse_reply(text: &str) -> Result<(String, Option<String>, Option<Usage>), ClientError> {
    let v: Value = serde_json::from_str(text).map_err(|e| ClientError::MalformedServerReply(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ClientError::MalformedServerReply("no choices[0].message.content".into()))?;
    let model = v.get("model").and_then(Value::as_str).map(String::from);
    let usage = v.get("usage").map(|u| Usage {
        prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64),
        completion_tokens: u.get("completion_tokens").and_then(Value::as_u64),
        total_tokens: u.get("total_tokens").and_then(Value::as_u64),
    });
    Ok((content.to_string(), model, usage))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_bounds() {
        let mut cfg = ModelConfig::new("http://localhost/v1/chat/completions", "m");
        assert!(cfg.validate().is_ok());
        cfg.temperature = 2.5;
        assert!(matches!(cfg.validate(), Err(ClientError::Config(_))));
        cfg.temperature = 0.2;
        cfg.max_tokens = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cache_key_covers_seed_and_decoding() {
        let cfg = ModelConfig::new("http://x", "m");
        let base = cache_key("h", &cfg, Some(1));
        assert_ne!(base, cache_key("h", &cfg, Some(2)));
        assert_ne!(base, cache_key("h", &cfg, None));
        let mut hot = cfg.clone();
        hot.temperature = 1.0;
        assert_ne!(base, cache_key("h", &hot, Some(1)));
        let mut other_endpoint = cfg.clone();
        other_endpoint.endpoint = "http://y".into();
        assert_eq!(base, cache_key("h", &other_endpoint, Some(1)));
    }

    #[test]
    fn reply_parsing() {
        let ok = r#"{"model":"x","choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"total_tokens":3}}"#;
        let (text, model, usage) = parse_reply(ok).unwrap();
        assert_eq!((text.as_str(), model.as_deref()), ("hi", Some("x")));
        assert_eq!(usage.unwrap().total_tokens, Some(3));
        assert!(matches!(parse_reply("{}"), Err(ClientError::MalformedServerReply(_))));
        assert!(matches!(parse_reply("nope"), Err(ClientError::MalformedServerReply(_))));
    }
}
