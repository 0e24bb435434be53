//! JSON-over-HTTP clients for the external parser, definition scorer and
//! question generator.
//!
//! | endpoint    | request                     | response                  |
//! |-------------|-----------------------------|---------------------------|
//! | `/parse`    | `{"sentences": [string]}`   | CoNLL-U text              |
//! | `/score`    | `{"sentences": [string]}`   | `{"scores": [number]}`    |
//! | `/generate` | `{"inputs": [string]}`      | `{"questions": [string]}` |
//!
//! Every request carries an `X-Request-Id` header that stays the same
//! across retries of that request.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::depgraph::{parse_conllu, DependencyGraph, GraphError};
use crate::generation::{build_generation_input, GenerationError, GenerationPair, QuestionGenerator};
use crate::selection::{DefinitionScorer, ScoredSentence, SelectionError};

pub const REQUEST_ID_HEADER: &str = "X-Request-Id";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("{url}: HTTP {status}: {body}")]
    Http { url: String, status: u16, body: String },
    #[error("{url}: timed out")]
    Timeout { url: String },
    #[error("{url}: {message}")]
    Transport { url: String, message: String },
    #[error("{url}: expected {expected} results, got {got}")]
    CountMismatch { url: String, expected: usize, got: usize },
    #[error("{url}: protocol error: {message}")]
    Protocol { url: String, message: String },
    #[error("{url}: malformed CoNLL-U: {source}")]
    Conllu {
        url: String,
        #[source]
        source: GraphError,
    },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

impl ClientError {
    fn retryable(&self) -> bool {
        match self {
            ClientError::Timeout { .. } | ClientError::Transport { .. } => true,
            ClientError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// Connection settings for one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceEndpoint {
    pub base_url: String,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub max_in_flight: usize,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    #[serde(with = "millis")]
    pub backoff: Duration,
    pub bearer_token: Option<String>,
    /// Items per request; `None` sends everything in one request.
    pub batch_size: Option<usize>,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for ServiceEndpoint {
    fn default() -> Self {
        ServiceEndpoint {
            base_url: String::new(),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
            retries: 2,
            backoff: Duration::from_millis(200),
            bearer_token: None,
            batch_size: None,
        }
    }
}

impl ServiceEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServiceEndpoint {
            base_url: base_url.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout.is_zero() {
            return Err(ClientError::Config("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ClientError::Config("max_in_flight must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(ClientError::Config("batch_size must be at least 1".into()));
        }
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return Err(ClientError::Config(format!("not an http(s) url: {:?}", self.base_url)));
        }
        Ok(())
    }
}

struct Semaphore {
    free: Mutex<usize>,
    released: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.released.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.released.notify_one();
    }
}

/// A shareable handle to one service. Concurrent callers are limited to
/// `max_in_flight` requests.
pub struct ServiceClient {
    endpoint: ServiceEndpoint,
    agent: ureq::Agent,
    gate: Semaphore,
}

impl std::fmt::Debug for ServiceClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceClient")
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

impl ServiceClient {
    pub fn new(endpoint: ServiceEndpoint) -> Result<Self, ClientError> {
        endpoint.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Semaphore::new(endpoint.max_in_flight);
        Ok(ServiceClient { endpoint, agent, gate })
    }

    pub fn endpoint(&self) -> &ServiceEndpoint {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.endpoint.base_url.trim_end_matches('/'))
    }

    /// POSTs `body` and returns the response text, retrying transient failures.
    pub fn post_json(&self, path: &str, body: &serde_json::Value) -> Result<String, ClientError> {
        let url = self.url(path);
        let request_id = uuid::Uuid::new_v4().to_string();
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.send_once(&url, &request_id, body) {
                Err(e) if e.retryable() && attempt < self.endpoint.retries => {
                    std::thread::sleep(self.endpoint.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn send_once(&self, url: &str, request_id: &str, body: &serde_json::Value) -> Result<String, ClientError> {
        let mut request = self.agent.post(url).header(REQUEST_ID_HEADER, request_id);
        if let Some(token) = &self.endpoint.bearer_token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let transport = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => ClientError::Timeout { url: url.to_string() },
            other => ClientError::Transport {
                url: url.to_string(),
                message: other.to_string(),
            },
        };
        let mut response = request.send_json(body).map_err(transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        if status >= 400 {
            return Err(ClientError::Http {
                url: url.to_string(),
                status,
                body: text,
            });
        }
        Ok(text)
    }

    /// Splits `items` into batches, sends them concurrently and concatenates
    /// the results in input order.
    fn batched<T: Send + Sync, R: Send>(
        &self,
        items: &[T],
        call: impl Fn(&[T]) -> Result<Vec<R>, ClientError> + Sync,
    ) -> Result<Vec<R>, ClientError> {
        let size = self.endpoint.batch_size.unwrap_or(items.len()).max(1);
        let chunks: Vec<&[T]> = items.chunks(size).collect();
        if chunks.len() <= 1 {
            return chunks.first().map_or(Ok(Vec::new()), |c| call(c));
        }
        let results: Vec<Result<Vec<R>, ClientError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks.iter().map(|c| scope.spawn(|| call(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("client worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(items.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}

fn expect_len<T>(url: &str, expected: usize, got: Vec<T>) -> Result<Vec<T>, ClientError> {
    if got.len() != expected {
        return Err(ClientError::CountMismatch {
            url: url.to_string(),
            expected,
            got: got.len(),
        });
    }
    Ok(got)
}

fn decode<T: serde::de::DeserializeOwned>(url: &str, text: &str) -> Result<T, ClientError> {
    serde_json::from_str(text).map_err(|e| ClientError::Protocol {
        url: url.to_string(),
        message: e.to_string(),
    })
}

/// Relabels dependency relations after parsing, e.g. `nsubj:pass` → `nsubjpass`.
pub type LabelMap = HashMap<String, String>;

pub fn load_label_map(path: &Path) -> Result<LabelMap, ClientError> {
    let text = std::fs::read_to_string(path).map_err(|e| ClientError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ClientError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Parses sentences remotely; one graph per input, in input order. Graph
/// sentence ids are positional ("1", "2", ...) within each call.
pub fn remote_parse(
    client: &ServiceClient,
    sentences: &[&str],
    labels: Option<&LabelMap>,
) -> Result<Vec<DependencyGraph>, ClientError> {
    if sentences.is_empty() {
        return Err(ClientError::Config("empty parse batch".into()));
    }
    let url = client.url("/parse");
    let mut graphs = client.batched(sentences, |batch| {
        let text = client.post_json("/parse", &serde_json::json!({ "sentences": batch }))?;
        let graphs = parse_conllu(&text).map_err(|source| ClientError::Conllu {
            url: url.clone(),
            source,
        })?;
        expect_len(&url, batch.len(), graphs)
    })?;
    for (i, g) in graphs.iter_mut().enumerate() {
        *g = g.clone().with_sentence_id((i + 1).to_string());
        if let Some(map) = labels {
            g.map_labels(map);
        }
    }
    Ok(graphs)
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Definition probabilities for `sentences`, each validated to lie in [0, 1].
pub fn remote_score(client: &ServiceClient, sentences: &[&str]) -> Result<Vec<f64>, ClientError> {
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let url = client.url("/score");
    client.batched(sentences, |batch| {
        let text = client.post_json("/score", &serde_json::json!({ "sentences": batch }))?;
        let scores = expect_len(&url, batch.len(), decode::<ScoreResponse>(&url, &text)?.scores)?;
        if let Some((i, s)) = scores.iter().enumerate().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(ClientError::Protocol {
                url: url.clone(),
                message: format!("score {s} at position {i} outside [0, 1]"),
            });
        }
        Ok(scores)
    })
}

#[derive(Deserialize)]
struct GenerateResponse {
    questions: Vec<String>,
}

/// One question per `[SEP]` input, each non-empty.
pub fn remote_generate(client: &ServiceClient, inputs: &[String]) -> Result<Vec<String>, ClientError> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let url = client.url("/generate");
    client.batched(inputs, |batch| {
        let text = client.post_json("/generate", &serde_json::json!({ "inputs": batch }))?;
        let questions = expect_len(&url, batch.len(), decode::<GenerateResponse>(&url, &text)?.questions)?;
        if let Some(i) = questions.iter().position(|q| q.trim().is_empty()) {
            return Err(ClientError::Protocol {
                url: url.clone(),
                message: format!("empty question at position {i}"),
            });
        }
        Ok(questions)
    })
}

/// A [`DefinitionScorer`] backed by the `/score` endpoint.
#[derive(Debug)]
pub struct RemoteScorer {
    client: ServiceClient,
}

impl RemoteScorer {
    pub fn new(client: ServiceClient) -> Self {
        RemoteScorer { client }
    }
}

impl DefinitionScorer for RemoteScorer {
    fn id(&self) -> String {
        format!("external:{}", self.client.endpoint.base_url)
    }

    fn score_all(&self, sentences: &[&Sentence]) -> Result<Vec<ScoredSentence>, SelectionError> {
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        let id = self.id();
        let scores = remote_score(&self.client, &texts).map_err(|e| SelectionError::Scorer {
            scorer: id.clone(),
            sentence_id: sentences.first().map_or_else(String::new, |s| s.id.clone()),
            message: e.to_string(),
        })?;
        sentences
            .iter()
            .zip(scores)
            .map(|(s, score)| ScoredSentence::new(&s.id, score, &id))
            .collect()
    }
}

/// A [`QuestionGenerator`] backed by the `/generate` endpoint.
#[derive(Debug)]
pub struct RemoteGenerator {
    client: ServiceClient,
    name: String,
}

impl RemoteGenerator {
    pub fn new(client: ServiceClient, name: impl Into<String>) -> Self {
        RemoteGenerator {
            client,
            name: name.into(),
        }
    }
}

impl QuestionGenerator for RemoteGenerator {
    fn id(&self) -> String {
        format!("external:{}", self.name)
    }

    fn generate_batch(&self, pairs: &[GenerationPair<'_>]) -> Result<Vec<String>, GenerationError> {
        let inputs = pairs
            .iter()
            .map(|p| build_generation_input(p.sentence, &p.answer))
            .collect::<Result<Vec<_>, _>>()?;
        remote_generate(&self.client, &inputs).map_err(|e| GenerationError::Backend {
            generator: self.id(),
            message: e.to_string(),
        })
    }
}

/// Service locations, read from a JSON file and overridable through
/// `DEFQUEST_PARSER_URL`, `DEFQUEST_SCORER_URL`, `DEFQUEST_GENERATOR_URL`
/// and `DEFQUEST_LABEL_MAP_PATH`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub parser_url: Option<String>,
    pub scorer_url: Option<String>,
    pub generator_url: Option<String>,
    pub label_map_path: Option<PathBuf>,
}

impl ClientConfig {
    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ClientError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn with_env(self) -> Self {
        self.with_overrides(|key| std::env::var(key).ok())
    }

    /// Applies overrides from `lookup`, which maps variable names to values.
    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(v) = lookup("DEFQUEST_PARSER_URL") {
            self.parser_url = Some(v);
        }
        if let Some(v) = lookup("DEFQUEST_SCORER_URL") {
            self.scorer_url = Some(v);
        }
        if let Some(v) = lookup("DEFQUEST_GENERATOR_URL") {
            self.generator_url = Some(v);
        }
        if let Some(v) = lookup("DEFQUEST_LABEL_MAP_PATH") {
            self.label_map_path = Some(PathBuf::from(v));
        }
        self
    }
}
