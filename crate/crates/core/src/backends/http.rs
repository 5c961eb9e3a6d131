use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, BackendError, Completion, RequestContext};
use crate::budget::Pricing;
use crate::error::{Error, Result};
use crate::prompts::PromptRecord;
use crate::textproc::count_tokens;

/// Chat-completion style endpoint settings.
///
/// `request_template` is any JSON document; string values equal to
/// `"{prompt}"`, `"{model}"` or `"{max_tokens}"` are substituted (the last one
/// as a number). Responses are read through JSON pointers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub url: String,
    pub model: String,
    pub headers: BTreeMap<String, String>,
    /// Environment variable holding the API key, sent as `Bearer <key>`.
    pub api_key_env: Option<String>,
    pub request_template: Value,
    pub response_path: String,
    pub prompt_tokens_path: String,
    pub output_tokens_path: String,
    pub max_retries: usize,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub bills_failures: bool,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: "http://localhost:8000/v1/chat/completions".into(),
            model: "model".into(),
            headers: BTreeMap::new(),
            api_key_env: None,
            request_template: serde_json::json!({
                "model": "{model}",
                "messages": [{"role": "user", "content": "{prompt}"}],
                "max_tokens": "{max_tokens}",
                "temperature": 0
            }),
            response_path: "/choices/0/message/content".into(),
            prompt_tokens_path: "/usage/prompt_tokens".into(),
            output_tokens_path: "/usage/completion_tokens".into(),
            max_retries: 2,
            backoff_ms: 250,
            timeout_ms: 60_000,
            max_in_flight: 4,
            bills_failures: false,
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    name: String,
    pricing: Pricing,
    config: HttpConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    in_flight: Semaphore,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("name", &self.name)
            .field("url", &self.config.url)
            .finish()
    }
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl HttpBackend {
    pub fn new(name: impl Into<String>, pricing: Pricing, config: HttpConfig) -> Result<Self> {
        let name = name.into();
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("{name}: environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            in_flight: Semaphore::new(config.max_in_flight),
            name,
            pricing,
            config,
            agent,
            api_key,
        })
    }

    fn request_body(&self, prompt: &PromptRecord) -> Value {
        fn fill(v: &Value, prompt: &str, model: &str, max_tokens: usize) -> Value {
            match v {
                Value::String(s) if s == "{prompt}" => Value::String(prompt.to_string()),
                Value::String(s) if s == "{model}" => Value::String(model.to_string()),
                Value::String(s) if s == "{max_tokens}" => Value::from(max_tokens),
                Value::Array(a) => Value::Array(a.iter().map(|x| fill(x, prompt, model, max_tokens)).collect()),
                Value::Object(o) => Value::Object(
                    o.iter()
                        .map(|(k, x)| (k.clone(), fill(x, prompt, model, max_tokens)))
                        .collect(),
                ),
                other => other.clone(),
            }
        }
        fill(
            &self.config.request_template,
            &prompt.text,
            &self.config.model,
            prompt.max_output_tokens,
        )
    }

    fn attempt(&self, body: &Value) -> std::result::Result<Value, Attempt> {
        let mut req = self.agent.post(&self.config.url);
        for (k, v) in &self.config.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| Attempt::Fatal(format!("body is not JSON: {e}")))
    }

    fn parse(&self, prompt: &PromptRecord, v: &Value) -> Result<Completion, BackendError> {
        let output = v
            .pointer(&self.config.response_path)
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::InvalidResponse {
                backend: self.name.clone(),
                message: format!("no string at {}", self.config.response_path),
            })?
            .to_string();
        let usage = |path: &str| v.pointer(path).and_then(Value::as_u64).map(|n| n as usize);
        Ok(Completion {
            prompt_tokens: usage(&self.config.prompt_tokens_path).unwrap_or_else(|| count_tokens(&prompt.text)),
            output_tokens: usage(&self.config.output_tokens_path).unwrap_or_else(|| count_tokens(&output)),
            output,
        })
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn pricing(&self) -> &Pricing {
        &self.pricing
    }

    fn bills_failures(&self) -> bool {
        self.config.bills_failures
    }

    fn complete(&self, _ctx: &RequestContext<'_>, prompt: &PromptRecord) -> Result<Completion, BackendError> {
        let body = self.request_body(prompt);
        let _slot = self.in_flight.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for i in 0..attempts {
            if i > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (i - 1).min(16));
                log::debug!("{}: retry {i} in {wait} ms after: {last}", self.name);
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body) {
                Ok(v) => return self.parse(prompt, &v),
                Err(Attempt::Retry(msg)) => last = msg,
                Err(Attempt::Fatal(msg)) => {
                    return Err(BackendError::Transport {
                        backend: self.name.clone(),
                        attempts: i + 1,
                        message: msg,
                    })
                }
            }
        }
        Err(BackendError::Transport {
            backend: self.name.clone(),
            attempts,
            message: last,
        })
    }
}
