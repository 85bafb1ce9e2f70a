//! Chat-completion access.
//!
//! A [`Gateway`] wraps one [`Backend`] and adds the client-side prompt budget,
//! call spacing and rate-limit backoff. Context overflow is always returned to
//! the caller; shrinking the prompt is the pipeline's job.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_TOP_P: f64 = 0.8;
pub const KEYPOINT_MAX_TOKENS: u32 = 512;
pub const PREDICTION_MAX_TOKENS: u32 = 1024;
pub const API_KEY_ENV: &str = "ZSLKEP_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChatRequest {
    pub system_message: String,
    pub user_message: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
}

impl ChatRequest {
    pub fn new(system_message: String, user_message: String, max_new_tokens: u32) -> Self {
        ChatRequest {
            system_message,
            user_message,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_new_tokens,
        }
    }

    pub fn with_sampling(mut self, temperature: f64, top_p: f64) -> Self {
        self.temperature = temperature;
        self.top_p = top_p;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::malformed(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.top_p.is_nan() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(GatewayError::malformed(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(GatewayError::malformed("max_new_tokens must be > 0"));
        }
        Ok(())
    }

    /// Whitespace-token estimate of the prompt size.
    pub fn estimated_prompt_tokens(&self) -> usize {
        self.system_message.split_whitespace().count() + self.user_message.split_whitespace().count()
    }
}

/// Sampling settings for one kind of call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
}

impl GenerationSettings {
    pub fn keypoints() -> Self {
        GenerationSettings {
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            max_new_tokens: KEYPOINT_MAX_TOKENS,
        }
    }

    pub fn prediction() -> Self {
        GenerationSettings {
            max_new_tokens: PREDICTION_MAX_TOKENS,
            ..Self::keypoints()
        }
    }

    pub fn request(&self, system_message: String, user_message: String) -> ChatRequest {
        ChatRequest::new(system_message, user_message, self.max_new_tokens)
            .with_sampling(self.temperature, self.top_p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayErrorKind {
    ContextOverflow,
    RateLimited,
    Transport,
    Malformed,
}

impl fmt::Display for GatewayErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatewayErrorKind::ContextOverflow => "context overflow",
            GatewayErrorKind::RateLimited => "rate limited",
            GatewayErrorKind::Transport => "transport error",
            GatewayErrorKind::Malformed => "malformed exchange",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind}: {detail}")]
pub struct GatewayError {
    pub kind: GatewayErrorKind,
    pub detail: String,
}

impl GatewayError {
    pub fn new(kind: GatewayErrorKind, detail: impl Into<String>) -> Self {
        GatewayError {
            kind,
            detail: detail.into(),
        }
    }

    pub fn malformed(detail: impl Into<String>) -> Self {
        Self::new(GatewayErrorKind::Malformed, detail)
    }

    pub fn is_context_overflow(&self) -> bool {
        self.kind == GatewayErrorKind::ContextOverflow
    }
}

/// Something that turns a chat request into a completion.
///
/// `claim_id` only routes scripted responses; real backends ignore it.
pub trait Backend: Send + Sync {
    fn send(&self, claim_id: usize, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    fn name(&self) -> &str;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn send(&self, claim_id: usize, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).send(claim_id, request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    /// Total attempts for a rate-limited call, including the first.
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
    /// Prompts estimated above this many tokens fail with `ContextOverflow`
    /// before reaching the backend.
    pub prompt_budget_tokens: usize,
    /// Minimum spacing between outbound calls.
    pub min_interval: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_attempts: 5,
            backoff_base: Duration::from_secs(1),
            backoff_max: Duration::from_secs(60),
            prompt_budget_tokens: 8000,
            min_interval: Duration::ZERO,
        }
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    config: GatewayConfig,
    next_slot: Mutex<Option<Instant>>,
    overflows: AtomicUsize,
    rate_limit_retries: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static, config: GatewayConfig) -> Self {
        Self::from_boxed(Box::new(backend), config)
    }

    pub fn from_boxed(backend: Box<dyn Backend>, config: GatewayConfig) -> Self {
        Gateway {
            backend,
            config,
            next_slot: Mutex::new(None),
            overflows: AtomicUsize::new(0),
            rate_limit_retries: AtomicUsize::new(0),
        }
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Number of `ContextOverflow` results handed back so far.
    pub fn overflow_count(&self) -> usize {
        self.overflows.load(Ordering::Relaxed)
    }

    pub fn rate_limit_retries(&self) -> usize {
        self.rate_limit_retries.load(Ordering::Relaxed)
    }

    pub fn complete(&self, claim_id: usize, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let estimate = request.estimated_prompt_tokens();
        if estimate > self.config.prompt_budget_tokens {
            self.overflows.fetch_add(1, Ordering::Relaxed);
            return Err(GatewayError::new(
                GatewayErrorKind::ContextOverflow,
                format!(
                    "prompt estimated at {estimate} tokens exceeds budget of {}",
                    self.config.prompt_budget_tokens
                ),
            ));
        }

        let mut attempt = 0;
        loop {
            attempt += 1;
            self.wait_for_slot();
            match self.backend.send(claim_id, request) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.kind == GatewayErrorKind::RateLimited && attempt < self.config.max_attempts => {
                    let delay = self.backoff(attempt);
                    log::warn!(
                        "claim {claim_id}: rate limited (attempt {attempt}/{}), retrying in {delay:?}",
                        self.config.max_attempts
                    );
                    self.rate_limit_retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(delay);
                }
                Err(e) => {
                    if e.is_context_overflow() {
                        self.overflows.fetch_add(1, Ordering::Relaxed);
                    }
                    return Err(e);
                }
            }
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt - 1).unwrap_or(u32::MAX);
        self.config
            .backoff_base
            .saturating_mul(factor)
            .min(self.config.backoff_max)
    }

    fn wait_for_slot(&self) {
        if self.config.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut slot = self.next_slot.lock().expect("rate limiter lock");
            let now = Instant::now();
            let start = slot.map_or(now, |s| s.max(now));
            *slot = Some(start + self.config.min_interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// One scripted reply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Fail {
        error: GatewayErrorKind,
        #[serde(default)]
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordedCall {
    pub claim_id: usize,
    pub request: ChatRequest,
}

/// Replays per-claim scripts in call order and records every request.
pub struct MockBackend {
    scripts: Vec<Vec<MockReply>>,
    cursors: Vec<AtomicUsize>,
    log: Mutex<Vec<RecordedCall>>,
}

impl MockBackend {
    pub fn new(scripts: Vec<Vec<MockReply>>) -> Self {
        let cursors = scripts.iter().map(|_| AtomicUsize::new(0)).collect();
        MockBackend {
            scripts,
            cursors,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Reads a script file: a JSON array indexed by claim, each element an
    /// array of replies (a string, or `{"error": "context_overflow"}`).
    pub fn from_file(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| crate::Error::io(path, e))?;
        let scripts: Vec<Vec<MockReply>> = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| crate::Error::malformed(path, e.to_string()))?;
        Ok(Self::new(scripts))
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.log.lock().expect("mock log lock").clone()
    }

    pub fn calls_for(&self, claim_id: usize) -> Vec<ChatRequest> {
        self.calls()
            .into_iter()
            .filter(|c| c.claim_id == claim_id)
            .map(|c| c.request)
            .collect()
    }
}

impl Backend for MockBackend {
    fn send(&self, claim_id: usize, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.log.lock().expect("mock log lock").push(RecordedCall {
            claim_id,
            request: request.clone(),
        });
        let (Some(script), Some(cursor)) = (self.scripts.get(claim_id), self.cursors.get(claim_id)) else {
            return Err(GatewayError::malformed(format!("no mock script for claim {claim_id}")));
        };
        let step = cursor.fetch_add(1, Ordering::SeqCst);
        match script.get(step) {
            Some(MockReply::Text(text)) => Ok(ChatResponse {
                text: text.clone(),
                finish_reason: FinishReason::Stop,
            }),
            Some(MockReply::Fail { error, detail }) => Err(GatewayError::new(*error, detail.clone())),
            None => Err(GatewayError::malformed(format!(
                "mock script for claim {claim_id} exhausted after {} replies",
                script.len()
            ))),
        }
    }

    fn name(&self) -> &str {
        "mock"
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpBackend {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            agent,
        }
    }

    /// Reads the API key from `ZSLKEP_API_KEY`.
    pub fn from_env(base_url: &str, model: &str, timeout: Duration) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(base_url, model, key, timeout)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn request_body(&self, request: &ChatRequest) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_message},
                {"role": "user", "content": request.user_message},
            ],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_new_tokens,
        })
    }
}

impl Backend for HttpBackend {
    fn send(&self, _claim_id: usize, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = self.request_body(request).to_string();
        let mut req = self.agent.post(&self.endpoint).content_type("application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| GatewayError::new(GatewayErrorKind::Transport, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::new(GatewayErrorKind::Transport, e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_http_failure(status, &text));
        }
        parse_completion(&text)
    }

    fn name(&self) -> &str {
        "http"
    }
}

const OVERFLOW_MARKERS: &[&str] = &[
    "context_length",
    "context length",
    "context window",
    "maximum context",
    "prompt is too long",
    "too many tokens",
    "reduce the length",
    "request too large",
    "input is too long",
];

/// Maps a non-2xx provider response onto the error taxonomy.
///
/// 413 and any body that mentions the context window count as overflow even
/// when the provider reports them as a rate limit.
pub fn classify_http_failure(status: u16, body: &str) -> GatewayError {
    let lower = body.to_lowercase();
    let mentions_overflow = OVERFLOW_MARKERS.iter().any(|m| lower.contains(m));
    let kind = match status {
        413 => GatewayErrorKind::ContextOverflow,
        _ if mentions_overflow && (status == 400 || status == 422 || status == 429) => {
            GatewayErrorKind::ContextOverflow
        }
        429 => GatewayErrorKind::RateLimited,
        500..=599 | 401 | 403 | 408 => GatewayErrorKind::Transport,
        _ => GatewayErrorKind::Malformed,
    };
    let snippet: String = body.chars().take(300).collect();
    GatewayError::new(kind, format!("HTTP {status}: {snippet}"))
}

/// Extracts the first choice's message text from a completion body.
pub fn parse_completion(body: &str) -> Result<ChatResponse, GatewayError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| GatewayError::malformed(format!("response is not JSON: {e}")))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::malformed("response has no choices"))?;
    let text = choice
        .pointer("/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| GatewayError::malformed("first choice has no message content"))?;
    let finish_reason = match choice.get("finish_reason").and_then(|f| f.as_str()) {
        Some("length") => FinishReason::Length,
        Some("error") => FinishReason::Error,
        _ => FinishReason::Stop,
    };
    Ok(ChatResponse {
        text: text.to_string(),
        finish_reason,
    })
}
