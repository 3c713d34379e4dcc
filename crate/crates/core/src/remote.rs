//! HTTP-backed providers: embeddings, extraction completions and NLI.
//!
//! All three post JSON with an optional bearer token. 429 and 5xx responses
//! and connection failures are transport errors (retryable, honoring
//! `Retry-After`); other statuses and malformed bodies are not.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embed::{EmbeddingProvider, ProviderMode};
use crate::error::{Error, Result};
use crate::extract::{retry_transient, ExtractionPrompt, ExtractorMode, ExtractorProvider, RetryPolicy};
use crate::graph::{NliMode, NliProvider};

pub const EMBED_ENV: (&str, &str) = ("EMBED_ENDPOINT", "EMBED_API_KEY");
pub const LLM_ENV: (&str, &str) = ("LLM_ENDPOINT", "LLM_API_KEY");
pub const NLI_ENV: (&str, &str) = ("NLI_ENDPOINT", "NLI_API_KEY");

/// Texts per embedding request.
const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: "default".into(),
            max_in_flight: 4,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads `(endpoint, key)` variables such as [`EMBED_ENV`].
    pub fn from_env(vars: (&str, &str)) -> Result<Self> {
        let endpoint = std::env::var(vars.0)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| Error::Argument(format!("{} is not set", vars.0)))?;
        let mut cfg = RemoteConfig::new(endpoint);
        cfg.api_key = std::env::var(vars.1).ok().filter(|v| !v.is_empty());
        Ok(cfg)
    }
}

/// Counting semaphore bounding concurrent requests.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

struct Client {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    permits: Permits,
}

impl Client {
    fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Client {
            permits: Permits::new(cfg.max_in_flight),
            agent,
            cfg,
        }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, provider: &str, body: &B) -> Result<R> {
        let _permit = self.permits.acquire();
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Error::Transport {
            message: format!("{provider}: {e}"),
            retry_after_ms: None,
        })?;
        let status = resp.status().as_u16();
        let retry_after_ms = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(|s| s.saturating_mul(1000));
        let raw = resp.body_mut().read_to_string().map_err(|e| Error::Transport {
            message: format!("{provider}: reading response: {e}"),
            retry_after_ms: None,
        })?;
        match status {
            200..=299 => serde_json::from_str(&raw).map_err(|e| Error::ProviderResponse {
                message: format!("{provider}: {e}"),
                raw,
            }),
            429 | 500..=599 => Err(Error::Transport {
                message: format!("{provider}: HTTP {status}"),
                retry_after_ms,
            }),
            _ => Err(Error::Provider {
                provider: provider.to_string(),
                message: format!("HTTP {status}: {raw}"),
            }),
        }
    }
}

pub struct RemoteEmbedder {
    client: Client,
    id: String,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteConfig, dim: usize) -> Self {
        RemoteEmbedder {
            id: format!("remote-embed:{}", cfg.model),
            client: Client::new(cfg),
            dim,
        }
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::Remote
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(EMBED_BATCH) {
            let body = json!({ "model": self.client.cfg.model, "input": chunk });
            let resp: EmbedResponse = retry_transient(&self.client.cfg.retry, || self.client.post(&self.id, &body))?;
            if resp.embeddings.len() != chunk.len() {
                return Err(Error::Provider {
                    provider: self.id.clone(),
                    message: format!(
                        "returned {} embeddings for {} inputs",
                        resp.embeddings.len(),
                        chunk.len()
                    ),
                });
            }
            out.extend(resp.embeddings);
        }
        Ok(out)
    }
}

/// Chat-style completion endpoint. Retries are left to the caller
/// ([`crate::extract::complete_with_retry`]).
pub struct RemoteExtractor {
    client: Client,
    id: String,
}

impl RemoteExtractor {
    pub fn new(cfg: RemoteConfig) -> Self {
        RemoteExtractor {
            id: format!("remote-llm:{}", cfg.model),
            client: Client::new(cfg),
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    content: String,
}

impl ExtractorProvider for RemoteExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> ExtractorMode {
        ExtractorMode::Remote
    }

    fn complete(&self, prompt: &ExtractionPrompt) -> Result<String> {
        let body = json!({
            "model": self.client.cfg.model,
            "messages": [
                { "role": "system", "content": prompt.system_instructions },
                { "role": "user", "content": prompt.render_user() },
            ],
            "temperature": 0,
        });
        let resp: CompletionResponse = self.client.post(&self.id, &body)?;
        Ok(resp.content)
    }
}

pub struct RemoteNli {
    client: Client,
    id: String,
}

impl RemoteNli {
    pub fn new(cfg: RemoteConfig) -> Self {
        RemoteNli {
            id: format!("remote-nli:{}", cfg.model),
            client: Client::new(cfg),
        }
    }
}

#[derive(Deserialize)]
struct NliResponse {
    entailment_probability: f64,
}

impl NliProvider for RemoteNli {
    fn id(&self) -> &str {
        &self.id
    }

    fn mode(&self) -> NliMode {
        NliMode::Remote
    }

    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        let body = json!({ "premise": premise, "hypothesis": hypothesis });
        let resp: NliResponse = retry_transient(&self.client.cfg.retry, || self.client.post(&self.id, &body))?;
        let p = resp.entailment_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Provider {
                provider: self.id.clone(),
                message: format!("entailment probability {p} outside [0, 1]"),
            });
        }
        Ok(p)
    }
}
