//! Model adapters: a remote chat-completion client, built-in baselines and
//! diagnostic oracles, plus the append-only response cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::casegen::EvalCase;
use crate::hashing::StableHasher;
use crate::ingest::Dataset;
use crate::metrics::TOP_N;
use crate::promptio::{parse_response, py_list, PromptText, RankedResponse};
use crate::synth::GroundTruth;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("model {model}: {message}")]
    Config { model: String, message: String },
    #[error("model {model}: environment variable {var} is not set")]
    MissingCredentials { model: String, var: String },
    #[error("model {model}: request failed after {attempts} attempts: {message}")]
    Transport {
        model: String,
        attempts: u32,
        message: String,
    },
    #[error("model {model}: unexpected response body: {message}")]
    BadResponse { model: String, message: String },
    #[error("model {model}: no cached response for case {case_id}")]
    CacheMiss { model: String, case_id: String },
    #[error("model {model}: ground truth is required")]
    MissingGroundTruth { model: String },
    #[error("model {model}: no ground-truth distribution for proxy {proxy}")]
    UnknownProxy { model: String, proxy: String },
    #[error("cache {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    HttpChat,
    Random,
    Oracle,
    GroupOracle,
    Popularity,
    Replay,
}

fn default_retries() -> u32 {
    5
}
fn default_timeout() -> u64 {
    60
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    /// Chat-completions URL, e.g. `http://host/v1/chat/completions`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    /// Total attempts per request.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Requests per minute; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_min: Option<f64>,
    /// Environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// For `replay`: the model whose cached responses are replayed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_of: Option<String>,
}

impl ModelSpec {
    pub fn baseline(name: &str, kind: ModelKind) -> Self {
        ModelSpec {
            name: name.to_string(),
            kind,
            endpoint: None,
            model_id: None,
            temperature: 0.0,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            backoff_ms: default_backoff(),
            rate_limit_per_min: None,
            api_key_env: None,
            replay_of: None,
        }
    }

    pub fn http(name: &str, endpoint: &str, model_id: &str) -> Self {
        ModelSpec {
            endpoint: Some(endpoint.to_string()),
            model_id: Some(model_id.to_string()),
            ..Self::baseline(name, ModelKind::HttpChat)
        }
    }

    /// Model name under which responses are cached and looked up.
    pub fn cache_name(&self) -> &str {
        match (self.kind, &self.replay_of) {
            (ModelKind::Replay, Some(src)) => src,
            _ => &self.name,
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        let bad = |message: &str| {
            Err(AdapterError::Config {
                model: self.name.clone(),
                message: message.to_string(),
            })
        };
        if self.name.trim().is_empty() {
            return bad("name must not be empty");
        }
        if self.temperature != 0.0 {
            return bad("temperature must be 0");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be at least 1");
        }
        if let Some(r) = self.rate_limit_per_min {
            if !(r > 0.0 && r.is_finite()) {
                return bad("rate_limit_per_min must be positive");
            }
        }
        if self.kind == ModelKind::HttpChat && (self.endpoint.is_none() || self.model_id.is_none()) {
            return bad("http_chat needs endpoint and model_id");
        }
        Ok(())
    }
}

/// Anything that turns a case and its prompt into a ranked response.
pub trait Ranker: Send + Sync {
    fn name(&self) -> &str;
    fn rank(&self, case: &EvalCase, prompt: &PromptText) -> Result<RankedResponse, AdapterError>;
}

/// Shared inputs the built-in rankers read.
#[derive(Clone, Copy)]
pub struct RankContext<'a> {
    pub dataset: &'a Dataset,
    pub truth: Option<&'a GroundTruth>,
    pub cache: Option<&'a ResponseCache>,
    pub seed: u64,
}

pub fn build_ranker<'a>(spec: &ModelSpec, ctx: RankContext<'a>) -> Result<Box<dyn Ranker + 'a>, AdapterError> {
    spec.validate()?;
    let name = spec.name.clone();
    Ok(match spec.kind {
        ModelKind::Random => Box::new(RandomRanker {
            name,
            seed: ctx.seed,
            dataset: ctx.dataset,
        }),
        ModelKind::Oracle => Box::new(ScoreRanker {
            name,
            dataset: ctx.dataset,
            scorer: Scorer::Target,
        }),
        ModelKind::GroupOracle => {
            let truth = ctx.truth.ok_or(AdapterError::MissingGroundTruth { model: name.clone() })?;
            Box::new(ScoreRanker {
                name,
                dataset: ctx.dataset,
                scorer: Scorer::Group(truth),
            })
        }
        ModelKind::Popularity => Box::new(ScoreRanker {
            name,
            dataset: ctx.dataset,
            scorer: Scorer::Popularity(ctx.dataset.item_totals()),
        }),
        ModelKind::Replay => Box::new(ReplayRanker {
            name,
            source: spec.cache_name().to_string(),
            dataset: ctx.dataset,
            cache: ctx.cache.ok_or(AdapterError::Config {
                model: spec.name.clone(),
                message: "replay needs a response cache".into(),
            })?,
        }),
        ModelKind::HttpChat => Box::new(HttpChatRanker::new(spec, ctx.dataset)?),
    })
}

fn titles_of(dataset: &Dataset, ids: &[String]) -> Vec<String> {
    ids.iter()
        .map(|id| {
            dataset
                .item_position(id)
                .map(|p| dataset.items()[p as usize].title.clone())
                .unwrap_or_else(|| id.clone())
        })
        .collect()
}

fn baseline_response(case: &EvalCase, dataset: &Dataset, ranked: Vec<String>) -> RankedResponse {
    let raw = py_list(&titles_of(dataset, &ranked));
    RankedResponse::from_ids(&case.case_id, ranked, raw)
}

/// Uniform draw of 10 candidates without replacement, seeded per
/// (run seed, model, case).
pub struct RandomRanker<'a> {
    name: String,
    seed: u64,
    dataset: &'a Dataset,
}

impl RandomRanker<'_> {
    pub fn picks(seed: u64, model: &str, case: &EvalCase) -> Vec<usize> {
        let s = StableHasher::new().str("random").u64(seed).str(model).str(&case.case_id).finish();
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let n = case.candidates.len();
        rand::seq::index::sample(&mut rng, n, TOP_N.min(n)).into_vec()
    }
}

impl Ranker for RandomRanker<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn rank(&self, case: &EvalCase, _prompt: &PromptText) -> Result<RankedResponse, AdapterError> {
        let ranked = Self::picks(self.seed, &self.name, case)
            .into_iter()
            .map(|i| case.candidates[i].clone())
            .collect();
        Ok(baseline_response(case, self.dataset, ranked))
    }
}

enum Scorer<'a> {
    Target,
    Group(&'a GroundTruth),
    Popularity(Vec<u64>),
}

/// Top 10 candidates by a per-candidate score, ties by list position.
struct ScoreRanker<'a> {
    name: String,
    dataset: &'a Dataset,
    scorer: Scorer<'a>,
}

pub fn top_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(TOP_N);
    order
}

impl Ranker for ScoreRanker<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn rank(&self, case: &EvalCase, _prompt: &PromptText) -> Result<RankedResponse, AdapterError> {
        let scores: Vec<f64> = match &self.scorer {
            Scorer::Target => case.target.clone(),
            Scorer::Group(truth) => {
                let probs = truth.group_distribution(&case.proxy_key).ok_or_else(|| AdapterError::UnknownProxy {
                    model: self.name.clone(),
                    proxy: case.proxy_key.to_string(),
                })?;
                let index = truth.item_index();
                case.candidates
                    .iter()
                    .map(|id| index.get(id.as_str()).map_or(0.0, |&i| probs[i]))
                    .collect()
            }
            Scorer::Popularity(totals) => case
                .candidates
                .iter()
                .map(|id| self.dataset.item_position(id).map_or(0.0, |p| totals[p as usize] as f64))
                .collect(),
        };
        let ranked = top_by_score(&scores)
            .into_iter()
            .map(|i| case.candidates[i].clone())
            .collect();
        Ok(baseline_response(case, self.dataset, ranked))
    }
}

/// Parses the cached response of another model run.
pub struct ReplayRanker<'a> {
    name: String,
    source: String,
    dataset: &'a Dataset,
    cache: &'a ResponseCache,
}

impl Ranker for ReplayRanker<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn rank(&self, case: &EvalCase, prompt: &PromptText) -> Result<RankedResponse, AdapterError> {
        let rec = self
            .cache
            .get(&case.case_id, &self.source, prompt.hash())
            .ok_or_else(|| AdapterError::CacheMiss {
                model: self.name.clone(),
                case_id: case.case_id.clone(),
            })?;
        Ok(parse_response(&rec.response, case, self.dataset))
    }
}

struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(per_min: f64) -> Self {
        let capacity = per_min.clamp(1.0, 60.0);
        TokenBucket {
            capacity,
            per_sec: per_min / 60.0,
            tokens: capacity,
            last: Instant::now(),
        }
    }

    /// Takes one token, returning how long the caller must wait first.
    fn take(&mut self) -> Duration {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.per_sec).min(self.capacity);
        self.last = now;
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.per_sec)
        }
    }
}

/// OpenAI-style chat-completions client: one user message, temperature 0.
pub struct HttpChatRanker<'a> {
    spec: ModelSpec,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    bucket: Option<Mutex<TokenBucket>>,
    dataset: &'a Dataset,
}

impl<'a> HttpChatRanker<'a> {
    pub fn new(spec: &ModelSpec, dataset: &'a Dataset) -> Result<Self, AdapterError> {
        spec.validate()?;
        let api_key = match &spec.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| AdapterError::MissingCredentials {
                model: spec.name.clone(),
                var: var.clone(),
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs))
            .build()
            .map_err(|e| AdapterError::Config {
                model: spec.name.clone(),
                message: e.to_string(),
            })?;
        Ok(HttpChatRanker {
            spec: spec.clone(),
            api_key,
            client,
            bucket: spec.rate_limit_per_min.map(|r| Mutex::new(TokenBucket::new(r))),
            dataset,
        })
    }

    fn throttle(&self) {
        if let Some(bucket) = &self.bucket {
            let wait = bucket.lock().expect("bucket lock").take();
            if !wait.is_zero() {
                thread::sleep(wait);
            }
        }
    }

    /// Sends the prompt and returns the assistant message text.
    pub fn complete(&self, prompt: &str) -> Result<String, AdapterError> {
        let body = json!({
            "model": self.spec.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut last_err = String::new();
        for attempt in 1..=self.spec.max_retries {
            if attempt > 1 {
                let delay = self.spec.backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            self.throttle();
            let mut req = self.client.post(self.spec.endpoint.as_deref().unwrap_or_default()).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let v: serde_json::Value = resp.json().map_err(|e| self.bad(e.to_string()))?;
                        return v["choices"][0]["message"]["content"]
                            .as_str()
                            .map(str::to_string)
                            .ok_or_else(|| self.bad("missing choices[0].message.content".into()));
                    }
                    last_err = format!("HTTP {status}");
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    if !retryable {
                        return Err(self.transport(attempt, last_err));
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
            log::warn!("{}: attempt {attempt} failed: {last_err}", self.spec.name);
        }
        Err(self.transport(self.spec.max_retries, last_err))
    }

    fn bad(&self, message: String) -> AdapterError {
        AdapterError::BadResponse {
            model: self.spec.name.clone(),
            message,
        }
    }

    fn transport(&self, attempts: u32, message: String) -> AdapterError {
        AdapterError::Transport {
            model: self.spec.name.clone(),
            attempts,
            message,
        }
    }
}

impl Ranker for HttpChatRanker<'_> {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn rank(&self, case: &EvalCase, prompt: &PromptText) -> Result<RankedResponse, AdapterError> {
        let text = self.complete(&prompt.text)?;
        Ok(parse_response(&text, case, self.dataset))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub case_id: String,
    pub model: String,
    pub prompt_hash: u64,
    pub response: String,
    pub created_at: String,
}

impl CacheRecord {
    pub fn new(case_id: &str, model: &str, prompt_hash: u64, response: String) -> Self {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64);
        let created_at = chrono::DateTime::from_timestamp(secs, 0)
            .map(|t| t.to_rfc3339())
            .unwrap_or_default();
        CacheRecord {
            case_id: case_id.to_string(),
            model: model.to_string(),
            prompt_hash,
            response,
            created_at,
        }
    }
}

type CacheKey = (String, String, u64);

/// Append-only JSONL store of raw model responses. Reads see the latest
/// record per (case, model, prompt hash); one writer appends at a time.
pub struct ResponseCache {
    path: Option<PathBuf>,
    index: RwLock<HashMap<CacheKey, CacheRecord>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            index: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads an existing store (if any) and opens it for appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AdapterError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| AdapterError::Cache {
            path: path.display().to_string(),
            source,
        };
        let mut index = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        index.insert((rec.case_id.clone(), rec.model.clone(), rec.prompt_hash), rec);
                    }
                    Err(e) => log::warn!("{}:{}: skipping corrupt cache line: {e}", path.display(), n + 1),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(ResponseCache {
            path: Some(path),
            index: RwLock::new(index),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn get(&self, case_id: &str, model: &str, prompt_hash: u64) -> Option<CacheRecord> {
        let key = (case_id.to_string(), model.to_string(), prompt_hash);
        self.index.read().expect("cache lock").get(&key).cloned()
    }

    pub fn put(&self, record: CacheRecord) -> Result<(), AdapterError> {
        let mut writer = self.writer.lock().expect("cache lock");
        if let Some(w) = writer.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            let res = writeln!(w, "{line}").and_then(|_| w.flush());
            res.map_err(|source| AdapterError::Cache {
                path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                source,
            })?;
        }
        let key = (record.case_id.clone(), record.model.clone(), record.prompt_hash);
        self.index.write().expect("cache lock").insert(key, record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
