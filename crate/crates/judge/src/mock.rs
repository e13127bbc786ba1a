//! Deterministic mock judge: a wordlist-driven rule engine behind a
//! loopback HTTP server speaking the same chat schema as the real client.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use steerlab_core::eval::{count_bigrams, AnnotationList, CountMode};
use steerlab_core::tinylm::tokenizer::tokenize_words;

use crate::error::{JudgeError, Result};
use crate::protocol::{ChatRequest, ChatResponse, JudgeAnnotation};

const STOPWORDS: [&str; 12] = [
    "the", "a", "an", "and", "is", "are", "was", "were", "in", "of", "with", "this",
];

/// Pure rule set: the same target wordlist the bigram evaluator uses.
#[derive(Debug, Clone)]
pub struct MockRules {
    pub annotations: AnnotationList,
    /// Fraction of reference content words a generation must mention.
    pub match_threshold: f64,
}

impl MockRules {
    pub fn new(annotations: AnnotationList) -> Self {
        Self {
            annotations,
            match_threshold: 0.8,
        }
    }

    /// Load a ruleset from an annotation JSON file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let annotations = AnnotationList::load(path)
            .map_err(|e| JudgeError::Config(format!("bad ruleset file: {e}")))?;
        Ok(Self::new(annotations))
    }

    /// Count rule: lenient bigram matches; the reported span is the target
    /// head word of each matched bigram.
    pub fn annotate(&self, text: &str) -> JudgeAnnotation {
        let report = count_bigrams(text, &self.annotations, CountMode::Lenient);
        let spans = report
            .matches
            .iter()
            .map(|m| {
                m.bigram
                    .split_whitespace()
                    .next()
                    .unwrap_or_default()
                    .to_string()
            })
            .collect();
        JudgeAnnotation::from_spans(spans)
    }

    /// Match rule: the generation must mention at least `match_threshold`
    /// of the reference's content words (length >= 3, stopwords dropped).
    pub fn matches(&self, reference: &str, generation: &str) -> bool {
        let content: BTreeSet<String> = tokenize_words(reference)
            .into_iter()
            .filter(|w| w.len() >= 3 && !STOPWORDS.contains(&w.as_str()))
            .collect();
        if content.is_empty() {
            return true;
        }
        let gen_words: BTreeSet<String> = tokenize_words(generation).into_iter().collect();
        let covered = content.iter().filter(|w| gen_words.contains(*w)).count();
        covered as f64 / content.len() as f64 >= self.match_threshold
    }
}

/// Failure injection for client tests.
#[derive(Debug, Clone, Default)]
pub struct MockBehavior {
    /// Respond 500 to any request whose user text contains this needle.
    pub fail_contains: Option<String>,
    /// Respond 500 to the first N requests, then recover.
    pub fail_first: usize,
}

/// Loopback HTTP mock judge with the production wire schema.
pub struct MockJudgeServer {
    addr: std::net::SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

fn handle_chat(rules: &MockRules, request: &ChatRequest) -> std::result::Result<String, String> {
    let system = request
        .messages
        .iter()
        .find(|m| m.role == "system")
        .map(|m| m.content.as_str())
        .unwrap_or_default();
    let user = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user")
        .map(|m| m.content.as_str())
        .ok_or_else(|| "no user message".to_string())?;

    if system.contains("Count the number of times") {
        let annotation = rules.annotate(user);
        return serde_json::to_string(&annotation).map_err(|e| e.to_string());
    }
    if user.contains("Does the description match") {
        let reference = user
            .lines()
            .find_map(|l| l.strip_prefix("Reference description: "))
            .ok_or_else(|| "missing reference".to_string())?;
        let generation = user
            .lines()
            .find_map(|l| l.strip_prefix("Generated description: "))
            .ok_or_else(|| "missing generation".to_string())?;
        return Ok(if rules.matches(reference, generation) {
            "Yes".to_string()
        } else {
            "No".to_string()
        });
    }
    Err("unrecognized request".to_string())
}

impl MockJudgeServer {
    pub fn start(rules: MockRules) -> Result<Self> {
        Self::start_with(rules, MockBehavior::default())
    }

    pub fn start_with(rules: MockRules, behavior: MockBehavior) -> Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| JudgeError::Config(format!("cannot bind mock server: {e}")))?;
        let addr = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr,
            tiny_http::ListenAddr::Unix(_) => {
                return Err(JudgeError::Config("unexpected unix listener".into()))
            }
        };
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let thread_requests = Arc::clone(&requests);
        let thread_stop = Arc::clone(&stop);

        let handle = std::thread::spawn(move || {
            let json_header: tiny_http::Header =
                "Content-Type: application/json".parse().expect("header");
            while !thread_stop.load(Ordering::SeqCst) {
                let Ok(Some(mut request)) = server.recv_timeout(Duration::from_millis(50)) else {
                    continue;
                };
                let n = thread_requests.fetch_add(1, Ordering::SeqCst) + 1;
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);

                let should_fail = n <= behavior.fail_first
                    || behavior.fail_contains.as_deref().is_some_and(|needle| {
                        serde_json::from_str::<ChatRequest>(&body)
                            .ok()
                            .and_then(|r| {
                                r.messages
                                    .iter()
                                    .rev()
                                    .find(|m| m.role == "user")
                                    .map(|m| m.content.contains(needle))
                            })
                            .unwrap_or(false)
                    });
                let response = if should_fail {
                    tiny_http::Response::from_string("{\"error\":\"injected failure\"}")
                        .with_status_code(500)
                        .with_header(json_header.clone())
                } else {
                    match serde_json::from_str::<ChatRequest>(&body)
                        .map_err(|e| e.to_string())
                        .and_then(|req| handle_chat(&rules, &req))
                    {
                        Ok(content) => {
                            let reply = ChatResponse::from_content(content);
                            tiny_http::Response::from_string(
                                serde_json::to_string(&reply).expect("serializable reply"),
                            )
                            .with_header(json_header.clone())
                        }
                        Err(msg) => tiny_http::Response::from_string(format!(
                            "{{\"error\":{msg:?}}}"
                        ))
                        .with_status_code(400)
                        .with_header(json_header.clone()),
                    }
                };
                let _ = request.respond(response);
            }
        });

        Ok(Self {
            addr,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    /// Full chat-completions endpoint URL for a client config.
    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockJudgeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> MockRules {
        MockRules::new(
            AnnotationList::from_targets(vec!["stout".into(), "tall".into()]).unwrap(),
        )
    }

    #[test]
    fn mock_counts_match_bigram_rule() {
        let r = rules();
        let ann = r.annotate("a stout man");
        assert_eq!(ann.count, 1);
        assert_eq!(ann.spans, vec!["stout"]);
        // trailing target word starts no bigram
        assert_eq!(r.annotate("the man is stout").count, 0);
    }

    #[test]
    fn mock_is_pure() {
        let r = rules();
        assert_eq!(r.annotate("a tall tall person"), r.annotate("a tall tall person"));
    }

    #[test]
    fn match_rule_covers_content_words() {
        let r = rules();
        assert!(r.matches("a person", "there is a calm person here"));
        assert!(!r.matches("a person", "nothing to see"));
        // stopword-only reference matches anything
        assert!(r.matches("the and of", "whatever"));
    }
}
