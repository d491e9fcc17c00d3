//! HTTP text-completion backend.
//!
//! Talks to an OpenAI-style `/completions` endpoint that returns per-token
//! log-probabilities. A stateless API cannot keep the prefix cache alive, so
//! resume re-submits prompt + prefix text and the re-encoded prefix is charged
//! as resume overhead. Hidden states are not exposed over the wire, so the
//! checkpoint features are statistics of the prefix log-probabilities.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::metrics::answers_match;
use crate::rng::token_id;
use crate::types::{PathRecord, PathStatus, QueryRecord};

/// Suffix appended to math prompts.
pub const MATH_PROMPT_SUFFIX: &str =
    "Please reason step by step, and put your final answer within \\boxed{}.";
/// Suffix appended to multiple-choice science prompts.
pub const CHOICE_PROMPT_SUFFIX: &str =
    "Please show your choice in the answer field with only the choice letter, e.g., \"ANSWER\": \"C\".";

/// Width of the log-probability feature vector.
pub const LOGPROB_FEATURE_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL including the API version segment, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the API key. Keys are never read from files.
    pub api_key_env_var: Option<String>,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub resume_max_tokens: usize,
    pub timeout_secs: u64,
    pub retry_budget: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
    pub prompt_suffix: String,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model_name: String::new(),
            api_key_env_var: None,
            temperature: 0.6,
            top_p: 0.95,
            top_k: 40,
            resume_max_tokens: 16_384,
            timeout_secs: 600,
            retry_budget: 3,
            retry_backoff_ms: 500,
            max_in_flight: 16,
            prompt_suffix: MATH_PROMPT_SUFFIX.into(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::config("endpoint.base_url is empty"));
        }
        if self.model_name.is_empty() {
            return Err(Error::config("endpoint.model_name is empty"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::config("endpoint sampling parameters out of range"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::config("endpoint.max_in_flight must be >= 1"));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout(String),
    Connection(String),
    Status { code: u16, body: String },
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout(_) | TransportError::Connection(_) => true,
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
        }
    }

    fn context_overflow(&self) -> bool {
        match self {
            TransportError::Status { code: 400, body } => {
                let b = body.to_ascii_lowercase();
                b.contains("context length") || b.contains("context_length") || b.contains("maximum context")
            }
            _ => false,
        }
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Timeout(m) => write!(f, "timeout: {m}"),
            TransportError::Connection(m) => write!(f, "connection: {m}"),
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
        }
    }
}

/// One JSON POST.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        let mut req = self.agent.post(url);
        if let Some(k) = api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Err(TransportError::Timeout(t.to_string())),
            Err(e) => return Err(TransportError::Connection(e.to_string())),
        };
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Connection(format!("invalid JSON body: {e}")))
    }
}

/// A recorded exchange for offline replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureEntry {
    Response(Value),
    Timeout,
    Status { code: u16, body: String },
}

/// Replays recorded responses in order and records every request it sees.
#[derive(Default)]
pub struct FixtureTransport {
    queue: Mutex<VecDeque<FixtureEntry>>,
    requests: Mutex<Vec<Value>>,
}

impl FixtureTransport {
    pub fn new(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        FixtureTransport {
            queue: Mutex::new(entries.into_iter().collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<FixtureEntry> = serde_json::from_str(&text)?;
        Ok(Self::new(entries))
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl Transport for FixtureTransport {
    fn post_json(&self, _url: &str, _api_key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        self.requests.lock().unwrap().push(body.clone());
        match self.queue.lock().unwrap().pop_front() {
            Some(FixtureEntry::Response(v)) => Ok(v),
            Some(FixtureEntry::Timeout) => Err(TransportError::Timeout("fixture".into())),
            Some(FixtureEntry::Status { code, body }) => Err(TransportError::Status { code, body }),
            None => Err(TransportError::Connection("fixture exhausted".into())),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct Completion {
    text: String,
    tokens: Vec<String>,
    logprobs: Vec<f64>,
    finish_reason: Option<String>,
}

struct Inner {
    config: EndpointConfig,
    transport: Arc<dyn Transport>,
    api_key: Option<String>,
    retries_used: AtomicU64,
    gate: Gate,
}

#[derive(Clone)]
pub struct HttpBackend {
    inner: Arc<Inner>,
    name: String,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig, transport: Arc<dyn Transport>) -> Result<Self> {
        config.validate()?;
        let api_key = match &config.api_key_env_var {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::config(format!("API key variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(HttpBackend {
            name: format!("http:{}", config.model_name),
            inner: Arc::new(Inner {
                gate: Gate::new(config.max_in_flight),
                config,
                transport,
                api_key,
                retries_used: AtomicU64::new(0),
            }),
        })
    }

    /// Backend over a live endpoint.
    pub fn connect(config: EndpointConfig) -> Result<Self> {
        let transport = Arc::new(UreqTransport::new(Duration::from_secs(config.timeout_secs)));
        Self::new(config, transport)
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.inner.config
    }

    /// Retries consumed so far across all requests.
    pub fn retries_used(&self) -> u64 {
        self.inner.retries_used.load(Ordering::Relaxed)
    }

    fn full_prompt(&self, query: &QueryRecord) -> String {
        let suffix = &self.inner.config.prompt_suffix;
        if suffix.is_empty() {
            query.prompt.clone()
        } else {
            format!("{}\n{}", query.prompt, suffix)
        }
    }

    fn request_body(&self, prompt: &str, max_tokens: usize, seed: Option<u64>) -> Value {
        let c = &self.inner.config;
        let mut body = json!({
            "model": c.model_name,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": c.temperature,
            "top_p": c.top_p,
            "top_k": c.top_k,
            "logprobs": 1,
        });
        if let Some(s) = seed {
            body["seed"] = json!(s);
        }
        body
    }

    fn post(&self, body: &Value) -> Result<Value, TransportError> {
        let inner = &self.inner;
        let url = inner.config.completions_url();
        let _permit = inner.gate.acquire();
        let mut attempt = 0u32;
        loop {
            match inner.transport.post_json(&url, inner.api_key.as_deref(), body) {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt < inner.config.retry_budget => {
                    attempt += 1;
                    inner.retries_used.fetch_add(1, Ordering::Relaxed);
                    log::warn!("{url}: {e}; retry {attempt}/{}", inner.config.retry_budget);
                    let backoff = inner.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                    if backoff > 0 {
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn complete(&self, body: &Value, partial: &PathRecord) -> Result<Completion> {
        let endpoint = self.inner.config.completions_url();
        let value = self.post(body).map_err(|e| {
            if e.context_overflow() {
                Error::Truncation {
                    endpoint: endpoint.clone(),
                    partial: Box::new(partial.clone()),
                }
            } else if e.retryable() {
                Error::Transport {
                    attempts: self.inner.config.retry_budget + 1,
                    message: e.to_string(),
                }
            } else {
                Error::Endpoint(e.to_string())
            }
        })?;
        parse_completion(&value, &endpoint)
    }

    fn finish(&self, query: &QueryRecord, mut path: PathRecord, completion: Option<Completion>) -> PathRecord {
        if let Some(c) = completion {
            path.completion_tokens = c.tokens.len() as u64;
            path.reencode_tokens = path.prefix_tokens;
            path.tokens.extend(c.tokens.iter().map(|t| token_id(t)));
            path.token_logprobs.extend(c.logprobs);
            path.text.push_str(&c.text);
        }
        let answer = extract_answer(&path.text);
        path.is_correct = if query.gold_answer.is_empty() {
            None
        } else {
            Some(answers_match(&answer, &query.gold_answer))
        };
        path.answer = Some(answer);
        path.status = PathStatus::Completed;
        path
    }

    fn resume_seeded(&self, query: &QueryRecord, path: PathRecord, seed: Option<u64>) -> Result<PathRecord> {
        path.expect_status(PathStatus::Launched)?;
        if path.early_finish {
            return Ok(self.finish(query, path, None));
        }
        let prompt = format!("{}{}", self.full_prompt(query), path.text);
        let body = self.request_body(&prompt, self.inner.config.resume_max_tokens, seed);
        let completion = self.complete(&body, &path)?;
        Ok(self.finish(query, path, Some(completion)))
    }
}

fn parse_completion(value: &Value, endpoint: &str) -> Result<Completion> {
    let capability = |missing: &str| Error::Capability {
        endpoint: endpoint.to_string(),
        missing: missing.to_string(),
    };
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::Endpoint(format!("{endpoint}: response has no choices")))?;
    let text = choice.get("text").and_then(Value::as_str).unwrap_or_default().to_string();
    let lp = choice
        .get("logprobs")
        .filter(|v| !v.is_null())
        .ok_or_else(|| capability("per-token logprobs"))?;
    let tokens: Vec<String> = lp
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or_else(|| capability("logprobs.tokens"))?
        .iter()
        .map(|t| t.as_str().unwrap_or_default().to_string())
        .collect();
    let logprobs: Vec<f64> = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| capability("logprobs.token_logprobs"))?
        .iter()
        .map(|v| v.as_f64().map(|x| x.min(0.0)))
        .collect::<Option<_>>()
        .ok_or_else(|| capability("numeric token_logprobs"))?;
    if tokens.len() != logprobs.len() {
        return Err(Error::Endpoint(format!(
            "{endpoint}: {} tokens but {} logprobs",
            tokens.len(),
            logprobs.len()
        )));
    }
    Ok(Completion {
        text,
        tokens,
        logprobs,
        finish_reason: choice.get("finish_reason").and_then(Value::as_str).map(str::to_string),
    })
}

/// Final answer of a completion: the last `\boxed{...}`, else a quoted
/// `"ANSWER": "X"` field, else the last non-empty line.
pub fn extract_answer(text: &str) -> String {
    if let Some(start) = text.rfind("\\boxed{") {
        let body = &text[start + "\\boxed{".len()..];
        let mut depth = 1usize;
        for (i, ch) in body.char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return body[..i].trim().to_string();
                    }
                }
                _ => {}
            }
        }
    }
    if let Some(pos) = text.rfind("\"ANSWER\"") {
        let rest = text[pos + 8..].trim_start().trim_start_matches(':').trim_start();
        if let Some(r) = rest.strip_prefix('"') {
            if let Some(end) = r.find('"') {
                return r[..end].trim().to_string();
            }
        }
    }
    text.lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or_default()
        .to_string()
}

fn window_min_mean(lps: &[f64], w: usize) -> f64 {
    if lps.len() <= w {
        return lps.iter().sum::<f64>() / lps.len() as f64;
    }
    let mut sum: f64 = lps[..w].iter().sum();
    let mut best = sum;
    for i in w..lps.len() {
        sum += lps[i] - lps[i - w];
        best = best.min(sum);
    }
    best / w as f64
}

/// Fixed-width summary of a log-probability sequence: mean, min, std,
/// sliding-window minima (128 and 32), tail fractions, and length in units of
/// 1024 tokens.
pub fn logprob_features(lps: &[f64]) -> Vec<f64> {
    if lps.is_empty() {
        return vec![0.0; LOGPROB_FEATURE_DIM];
    }
    let n = lps.len() as f64;
    let mean = lps.iter().sum::<f64>() / n;
    let min = lps.iter().copied().fold(f64::INFINITY, f64::min);
    let var = lps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    vec![
        mean,
        min,
        var.sqrt(),
        window_min_mean(lps, 128),
        window_min_mean(lps, 32),
        lps.iter().filter(|&&x| x < -1.0).count() as f64 / n,
        lps.iter().filter(|&&x| x < -3.0).count() as f64 / n,
        n / 1024.0,
    ]
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn launch_prefix(&self, query: &QueryRecord, path_id: u32, prefix_len: usize) -> Result<PathRecord> {
        if prefix_len == 0 {
            return Err(Error::invalid("prefix length must be >= 1"));
        }
        let empty = PathRecord {
            query_id: query.query_id.clone(),
            path_id,
            tokens: Vec::new(),
            token_logprobs: Vec::new(),
            text: String::new(),
            checkpoint_features: None,
            status: PathStatus::Launched,
            answer: None,
            is_correct: None,
            prefix_tokens: 0,
            completion_tokens: 0,
            reencode_tokens: 0,
            early_finish: false,
            latent: None,
        };
        let body = self.request_body(&self.full_prompt(query), prefix_len, None);
        let c = self.complete(&body, &empty)?;
        let early = c.finish_reason.as_deref() == Some("stop") || c.tokens.len() < prefix_len;
        let features = logprob_features(&c.logprobs);
        Ok(PathRecord {
            tokens: c.tokens.iter().map(|t| token_id(t)).collect(),
            prefix_tokens: c.tokens.len() as u64,
            token_logprobs: c.logprobs,
            text: c.text,
            checkpoint_features: Some(features),
            early_finish: early,
            ..empty
        })
    }

    fn resume_path(&self, query: &QueryRecord, path: PathRecord) -> Result<PathRecord> {
        self.resume_seeded(query, path, None)
    }

    fn rollout_from_prefix(
        &self,
        query: &QueryRecord,
        path: &PathRecord,
        k: usize,
        salt: u64,
    ) -> Result<Vec<PathRecord>> {
        if k == 0 {
            return Err(Error::invalid("rollout count K must be >= 1"));
        }
        path.expect_status(PathStatus::Launched)?;
        (0..k)
            .map(|j| {
                let seed = crate::rng::Stream::new(salt).index(j as u64).seed();
                self.resume_seeded(query, path.clone(), Some(seed))
            })
            .collect()
    }

    fn fork(&self, label: &str) -> Arc<dyn Backend> {
        let mut b = self.clone();
        b.name = format!("{}/{label}", self.name);
        Arc::new(b)
    }
}

/// External judge served by a completion endpoint. The judge is asked a yes/no
/// question about the prefix and the probability of its first answer token
/// becomes the score.
pub struct HttpJudge {
    backend: HttpBackend,
}

impl HttpJudge {
    pub fn new(backend: HttpBackend) -> Self {
        HttpJudge { backend }
    }

    fn prompt(query: &QueryRecord, prefix: &PathRecord) -> String {
        format!(
            "Problem:\n{}\n\nPartial solution:\n{}\n\nIs this partial solution on track to reach the correct final answer? Answer Yes or No.\nAnswer:",
            query.prompt, prefix.text
        )
    }
}

impl crate::signals::Judge for HttpJudge {
    fn judge(&self, query: &QueryRecord, prefix: &PathRecord) -> Result<f64> {
        let c = &self.backend.inner.config;
        let body = json!({
            "model": c.model_name,
            "prompt": Self::prompt(query, prefix),
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": 1,
        });
        let out = self.backend.complete(&body, prefix)?;
        let (token, lp) = match (out.tokens.first(), out.logprobs.first()) {
            (Some(t), Some(&lp)) => (t, lp),
            _ => return Err(Error::Endpoint(format!("{}: judge returned no tokens", c.completions_url()))),
        };
        let p = lp.exp();
        Ok(if token.trim().to_ascii_lowercase().starts_with("yes") {
            p
        } else {
            1.0 - p
        })
    }
}
