//! Text generation behind one contract: an HTTP backend, a scripted backend
//! for tests, and a persistent content-addressed response cache.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Retry ordinal. Attempt 0 is the first call; later attempts are cached
    /// under distinct keys so retries never replay the response they retry.
    #[serde(default)]
    pub attempt: u32,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: 8192,
            attempt: 0,
        }
    }

    pub fn with_attempt(&self, attempt: u32) -> Self {
        Self {
            attempt,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::Argument("prompt must be non-empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Argument("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    /// Output hit the token limit and may be truncated.
    Length,
    Error,
}

impl FinishReason {
    fn parse(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "stop" | "end_turn" | "stop_sequence" => FinishReason::Stop,
            "length" | "max_tokens" => FinishReason::Length,
            _ => FinishReason::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub backend_metadata: BTreeMap<String, String>,
}

impl Completion {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            backend_metadata: BTreeMap::new(),
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<Completion>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn generate(&self, req: &GenerationRequest) -> Result<Completion> {
        (**self).generate(req)
    }
}

/// Validates `req` and forwards it to `backend`.
pub fn generate(req: &GenerationRequest, backend: &dyn LlmBackend) -> Result<Completion> {
    req.validate()?;
    backend.generate(req)
}

/// SHA-256 over the model id, sampling settings, retry ordinal (when non-zero)
/// and prompt bytes, each length-prefixed.
pub fn cache_key(req: &GenerationRequest) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(req.model_id.as_bytes());
    field(&req.temperature.to_bits().to_le_bytes());
    field(&req.max_output_tokens.to_le_bytes());
    if req.attempt > 0 {
        field(&req.attempt.to_le_bytes());
    }
    field(req.prompt.as_bytes());
    hex::encode(h.finalize())
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Prompt contains this substring.
    Contains(String),
    /// Hex SHA-256 of the full prompt.
    PromptSha256(String),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::PromptSha256(h) => prompt_sha256(prompt).eq_ignore_ascii_case(h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub response: String,
    /// Restricts the rule to one retry ordinal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
}

impl ScriptRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Contains(needle.into()),
            response: response.into(),
            attempt: None,
            finish_reason: None,
        }
    }

    pub fn on_attempt(mut self, attempt: u32) -> Self {
        self.attempt = Some(attempt);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScriptDefault {
    #[default]
    Error,
    Response(String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ScriptedBackend {
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: ScriptDefault,
    #[serde(skip)]
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, default: ScriptDefault) -> Self {
        Self {
            rules,
            default,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of generate calls received so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmBackend for ScriptedBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Completion> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let rule = self
            .rules
            .iter()
            .find(|r| r.attempt.is_none_or(|a| a == req.attempt) && r.matcher.matches(&req.prompt));
        match (rule, &self.default) {
            (Some(r), _) => Ok(Completion {
                text: r.response.clone(),
                finish_reason: r.finish_reason.unwrap_or(FinishReason::Stop),
                backend_metadata: BTreeMap::new(),
            }),
            (None, ScriptDefault::Response(text)) => Ok(Completion::stop(text.clone())),
            (None, ScriptDefault::Error) => Err(Error::NoScriptedRule),
        }
    }
}

#[derive(Serialize)]
struct HttpGenerateBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_output_tokens: u32,
}

#[derive(Deserialize)]
struct HttpGenerateResponse {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

/// Client for `POST {"model", "prompt", "temperature", "max_output_tokens"}
/// -> {"text", "finish_reason"}` generation services.
pub struct HttpBackend {
    endpoint: String,
    token: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, auth_env: Option<&str>, retry: RetryPolicy, timeout: Duration) -> Result<Self> {
        Ok(Self {
            endpoint: endpoint.into(),
            token: http::token_from_env(auth_env)?,
            retry,
            agent: http::agent(timeout),
        })
    }
}

impl LlmBackend for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Completion> {
        let body = HttpGenerateBody {
            model: &req.model_id,
            prompt: &req.prompt,
            temperature: req.temperature,
            max_output_tokens: req.max_output_tokens,
        };
        let resp: HttpGenerateResponse = self
            .retry
            .run(|| http::post_json(&self.agent, &self.endpoint, self.token.as_deref(), &body))?;
        let finish_reason = resp
            .finish_reason
            .as_deref()
            .map(FinishReason::parse)
            .unwrap_or(FinishReason::Stop);
        let mut backend_metadata = BTreeMap::new();
        if let Some(raw) = resp.finish_reason {
            backend_metadata.insert("finish_reason".into(), raw);
        }
        Ok(Completion {
            text: resp.text,
            finish_reason,
            backend_metadata,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: String,
    finish_reason: FinishReason,
}

/// Append-only JSONL response cache. The first entry recorded for a key wins.
pub struct ResponseCache {
    entries: Mutex<HashMap<String, (String, FinishReason)>>,
    file: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
            path: None,
        }
    }

    /// Opens (or creates) a cache file. Unparseable lines, such as a torn
    /// final line after a crash, are skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if let Ok(l) = serde_json::from_str::<CacheLine>(&line) {
                    entries.entry(l.key).or_insert((l.response, l.finish_reason));
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        // Terminate a torn trailing line so the next append starts cleanly.
        if file.metadata()?.len() > 0 {
            let bytes = std::fs::read(&path)?;
            if bytes.last() != Some(&b'\n') {
                file.write_all(b"\n")?;
            }
        }
        Ok(Self {
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<(String, FinishReason)> {
        self.entries.lock().expect("cache poisoned").get(key).cloned()
    }

    /// Records a response unless the key is already present; returns the
    /// value now stored under `key`.
    pub fn put(&self, key: &str, response: &str, finish_reason: FinishReason) -> Result<(String, FinishReason)> {
        let mut entries = self.entries.lock().expect("cache poisoned");
        if let Some(existing) = entries.get(key) {
            return Ok(existing.clone());
        }
        let mut line = serde_json::to_string(&CacheLine {
            key: key.to_string(),
            response: response.to_string(),
            finish_reason,
        })?;
        line.push('\n');
        if let Some(f) = self.file.lock().expect("cache file poisoned").as_mut() {
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        let value = (response.to_string(), finish_reason);
        entries.insert(key.to_string(), value.clone());
        Ok(value)
    }
}

/// Serves repeated requests from a [`ResponseCache`]; only misses reach the inner backend.
pub struct CachedBackend {
    inner: Arc<dyn LlmBackend>,
    cache: Arc<ResponseCache>,
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn LlmBackend>, cache: Arc<ResponseCache>) -> Self {
        Self { inner, cache }
    }
}

impl LlmBackend for CachedBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Completion> {
        let key = cache_key(req);
        if let Some((text, finish_reason)) = self.cache.get(&key) {
            return Ok(Completion {
                text,
                finish_reason,
                backend_metadata: BTreeMap::from([("cache".to_string(), "hit".to_string())]),
            });
        }
        let completion = self.inner.generate(req)?;
        if completion.finish_reason == FinishReason::Error {
            return Ok(completion);
        }
        let (text, finish_reason) = self.cache.put(&key, &completion.text, completion.finish_reason)?;
        Ok(Completion {
            text,
            finish_reason,
            backend_metadata: completion.backend_metadata,
        })
    }
}

/// Counting semaphore capping concurrent calls into the wrapped backend.
pub struct InflightLimit {
    inner: Arc<dyn LlmBackend>,
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InflightLimit {
    pub fn new(inner: Arc<dyn LlmBackend>, max: usize) -> Self {
        Self {
            inner,
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

impl LlmBackend for InflightLimit {
    fn generate(&self, req: &GenerationRequest) -> Result<Completion> {
        {
            let mut active = self.active.lock().expect("limiter poisoned");
            while *active >= self.max {
                active = self.freed.wait(active).expect("limiter poisoned");
            }
            *active += 1;
        }
        let out = self.inner.generate(req);
        *self.active.lock().expect("limiter poisoned") -= 1;
        self.freed.notify_one();
        out
    }
}

/// LLM backend configuration, as read from JSON.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Http {
        endpoint: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_retries")]
        max_retries: u32,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Scripted(ScriptedBackend),
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> u64 {
    600
}

impl BackendSpec {
    pub fn build(self) -> Result<Arc<dyn LlmBackend>> {
        Ok(match self {
            BackendSpec::Http {
                endpoint,
                auth_env,
                max_retries,
                timeout_secs,
            } => Arc::new(HttpBackend::new(
                endpoint,
                auth_env.as_deref(),
                RetryPolicy {
                    max_retries,
                    ..RetryPolicy::default()
                },
                Duration::from_secs(timeout_secs),
            )?),
            BackendSpec::Scripted(s) => Arc::new(s),
        })
    }
}
