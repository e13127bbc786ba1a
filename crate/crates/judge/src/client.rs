//! Blocking HTTP judge client: retry with exponential backoff, bounded
//! request concurrency with order-preserving results, and write-through
//! disk caching.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cache::{cache_key, AnnotationCache};
use crate::error::{JudgeError, Result};
use crate::protocol::{
    count_messages, match_user_message, Attribute, ChatMessage, ChatRequest, ChatResponse,
    JudgeAnnotation, MatchVerdict, ResponseFormat, MATCH_SYSTEM_PROMPT,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    /// Full chat-completions endpoint URL.
    pub endpoint: String,
    /// Name of the environment variable holding the API key; the key
    /// itself is read at request time and never stored or logged.
    pub api_key_env: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            endpoint: std::env::var("JUDGE_API_URL").unwrap_or_default(),
            api_key_env: Some("JUDGE_API_KEY".into()),
            model: "gpt-4o".into(),
            timeout_secs: 30,
            max_concurrency: 4,
            max_retries: 3,
            backoff_base_ms: 250,
            cache_dir: None,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(JudgeError::Config("endpoint URL is empty".into()));
        }
        if self.timeout_secs == 0 {
            return Err(JudgeError::Config("timeout must be > 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(JudgeError::Config("max_concurrency must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of an ordered corpus annotation run; per-item failures are
/// recorded, not fatal, up to the 20% budget.
#[derive(Debug, Clone)]
pub struct CorpusAnnotations {
    pub annotations: Vec<Option<JudgeAnnotation>>,
    pub failures: Vec<(usize, String)>,
}

impl CorpusAnnotations {
    /// Counts per item, failures as None.
    pub fn counts(&self) -> Vec<Option<usize>> {
        self.annotations
            .iter()
            .map(|a| a.as_ref().map(|ann| ann.count))
            .collect()
    }
}

enum AttemptError {
    Transport(String),
    Status(u16),
    Protocol(String),
}

pub struct JudgeClient {
    config: JudgeConfig,
    http: reqwest::blocking::Client,
    cache: Option<AnnotationCache>,
}

impl JudgeClient {
    pub fn new(config: JudgeConfig) -> Result<Self> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| JudgeError::Config(format!("http client: {e}")))?;
        let cache = config
            .cache_dir
            .as_ref()
            .map(|dir| AnnotationCache::open(dir))
            .transpose()?;
        Ok(Self {
            config,
            http,
            cache,
        })
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.config
    }

    fn api_key(&self) -> Option<String> {
        self.config
            .api_key_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty())
    }

    fn attempt(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, AttemptError> {
        let mut builder = self.http.post(&self.config.endpoint).json(request);
        if let Some(key) = self.api_key() {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Status(status.as_u16()));
        }
        if !status.is_success() {
            return Err(AttemptError::Protocol(format!("status {status}")));
        }
        response
            .json::<ChatResponse>()
            .map_err(|e| AttemptError::Protocol(format!("bad reply envelope: {e}")))
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let attempts = self.config.max_retries + 1;
        let mut last: Option<AttemptError> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(request) {
                Ok(reply) => return Ok(reply),
                Err(AttemptError::Protocol(msg)) => return Err(JudgeError::Protocol(msg)),
                Err(e) => last = Some(e),
            }
        }
        let last = match last {
            Some(AttemptError::Transport(msg)) => msg,
            Some(AttemptError::Status(code)) => format!("status {code}"),
            _ => "unknown".into(),
        };
        Err(JudgeError::Unavailable { attempts, last })
    }

    fn request_annotation(&self, text: &str, attribute: Attribute) -> Result<JudgeAnnotation> {
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: count_messages(attribute, text),
            response_format: Some(ResponseFormat::count_annotation()),
        };
        let reply = self.send_with_retry(&request)?;
        JudgeAnnotation::parse(reply.content()?)
    }

    /// Structured span/count annotation of one text.
    pub fn annotate_count(&self, text: &str, attribute: Attribute) -> Result<JudgeAnnotation> {
        if text.is_empty() {
            return Err(JudgeError::Config("text is empty".into()));
        }
        let key = cache_key(&self.config.model, attribute, text);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                return Ok(hit);
            }
        }
        let annotation = self.request_annotation(text, attribute)?;
        if let Some(cache) = &self.cache {
            cache.put(key, &annotation)?;
        }
        Ok(annotation)
    }

    /// Yes/No verdict on whether a generation matches the reference
    /// description standing in for the image.
    pub fn judge_match(&self, reference: &str, generation: &str) -> Result<MatchVerdict> {
        if reference.is_empty() || generation.is_empty() {
            return Err(JudgeError::Config("reference and generation required".into()));
        }
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: vec![
                ChatMessage::new("system", MATCH_SYSTEM_PROMPT),
                ChatMessage::new("user", match_user_message(reference, generation)),
            ],
            response_format: None,
        };
        let reply = self.send_with_retry(&request)?;
        MatchVerdict::parse(reply.content()?)
    }

    /// Order-preserving annotation of a generation corpus with bounded
    /// concurrency; cached items never touch the network.
    pub fn annotate_corpus(
        &self,
        texts: &[String],
        attribute: Attribute,
    ) -> Result<CorpusAnnotations> {
        if texts.is_empty() {
            return Err(JudgeError::Config("no generations to annotate".into()));
        }
        let mut results: Vec<Option<JudgeAnnotation>> = vec![None; texts.len()];
        let mut pending = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let key = cache_key(&self.config.model, attribute, text);
            match self.cache.as_ref().and_then(|c| c.get(&key)) {
                Some(hit) => results[i] = Some(hit),
                None => pending.push(i),
            }
        }

        let failures = Mutex::new(Vec::<(usize, String)>::new());
        let slots = Mutex::new(results);
        let cursor = AtomicUsize::new(0);
        let workers = self.config.max_concurrency.min(pending.len().max(1));

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let at = cursor.fetch_add(1, Ordering::SeqCst);
                    let Some(&idx) = pending.get(at) else { break };
                    match self.request_annotation(&texts[idx], attribute) {
                        Ok(annotation) => {
                            if let Some(cache) = &self.cache {
                                let key = cache_key(&self.config.model, attribute, &texts[idx]);
                                let _ = cache.put(key, &annotation);
                            }
                            slots.lock().expect("slots lock")[idx] = Some(annotation);
                        }
                        Err(e) => failures
                            .lock()
                            .expect("failures lock")
                            .push((idx, e.to_string())),
                    }
                });
            }
        });

        let mut failures = failures.into_inner().expect("failures lock");
        failures.sort_by_key(|(i, _)| *i);
        let annotations = slots.into_inner().expect("slots lock");
        if failures.len() * 5 > texts.len() {
            return Err(JudgeError::CorpusAnnotationFailed {
                failed: failures.len(),
                total: texts.len(),
            });
        }
        Ok(CorpusAnnotations {
            annotations,
            failures,
        })
    }
}
