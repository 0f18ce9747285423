//! Embedding-service client.
//!
//! [`HttpEmbedder`] speaks the de-facto OpenAI-compatible `/embeddings`
//! shape and implements the core [`EmbeddingClient`] seam, so every scoring
//! and ranking path can swap between live service, cassette replay, disk
//! cache, and the synthetic embedder without code changes. Cached vectors
//! are keyed by `(model, text)` content hash, making reruns free and
//! deterministic.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use persona_core::embedding::{EmbedError, EmbeddingClient, EmbeddingTable};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cassette::Cassette;
use crate::chat::API_KEY_VAR;

#[derive(Serialize)]
struct WirePayload<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    data: Vec<WireVector>,
}

#[derive(Deserialize)]
struct WireVector {
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CachedVector {
    model: String,
    vector: Vec<f64>,
}

/// Live HTTP embedding client with optional cassette and disk cache.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    client: reqwest::blocking::Client,
    cassette: Option<Arc<Cassette>>,
    cache_dir: Option<PathBuf>,
}

impl HttpEmbedder {
    /// `endpoint` is the API base (the `/embeddings` path is appended).
    /// An empty `cache_dir` disables the disk cache. The API key is read
    /// from [`API_KEY_VAR`].
    pub fn new(
        endpoint: &str,
        model: &str,
        max_retries: u32,
        timeout_secs: u64,
        cache_dir: Option<&Path>,
        cassette: Option<Arc<Cassette>>,
    ) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| EmbedError::Transport { message: e.to_string() })?;
        Ok(HttpEmbedder {
            endpoint: endpoint.trim_end_matches('/').to_owned(),
            model: model.to_owned(),
            api_key: std::env::var(API_KEY_VAR).ok(),
            max_retries,
            client,
            cassette,
            cache_dir: cache_dir.map(Path::to_path_buf),
        })
    }

    fn cache_path(&self, text: &str) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let mut hasher = Sha256::new();
        hasher.update(self.model.as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut name = String::with_capacity(69);
        for byte in digest {
            use std::fmt::Write as _;
            let _ = write!(name, "{byte:02x}");
        }
        name.push_str(".json");
        Some(dir.join(name))
    }

    fn cache_get(&self, text: &str) -> Option<Vec<f64>> {
        let path = self.cache_path(text)?;
        let body = std::fs::read_to_string(path).ok()?;
        let cached: CachedVector = serde_json::from_str(&body).ok()?;
        (cached.model == self.model).then_some(cached.vector)
    }

    fn cache_put(&self, text: &str, vector: &[f64]) {
        let Some(path) = self.cache_path(text) else { return };
        if let Some(parent) = path.parent() {
            let _ = std::fs::create_dir_all(parent);
        }
        let cached = CachedVector { model: self.model.clone(), vector: vector.to_vec() };
        if let Ok(body) = serde_json::to_vec(&cached) {
            let _ = crate::formats::write_atomic(&path, &body);
        }
    }

    fn attempt(&self, texts: &[String]) -> Result<String, String> {
        if self.endpoint.is_empty() {
            return Err("embedding endpoint is not configured".to_owned());
        }
        let payload = WirePayload { model: &self.model, input: texts };
        let url = format!("{}/embeddings", self.endpoint);
        let mut builder = self.client.post(&url).json(&payload);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| e.to_string())?;
        let status = response.status();
        let body = response.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {}", body.chars().take(200).collect::<String>()));
        }
        Ok(body)
    }

    /// One service round trip (through the cassette when present),
    /// returning the raw response body.
    fn fetch_body(&self, texts: &[String]) -> Result<String, EmbedError> {
        let live = || -> Result<String, String> {
            let attempts = self.max_retries + 1;
            let mut last = String::new();
            for attempt in 0..attempts {
                match self.attempt(texts) {
                    Ok(body) => return Ok(body),
                    Err(message) => last = message,
                }
                if attempt + 1 < attempts {
                    std::thread::sleep(Duration::from_millis(100 * (1 << attempt.min(4))));
                }
            }
            Err(format!("embedding request failed after {attempts} attempts: {last}"))
        };
        match &self.cassette {
            Some(cassette) => {
                let envelope = serde_json::json!({
                    "kind": "embeddings",
                    "model": self.model,
                    "input": texts,
                });
                cassette
                    .exchange(&envelope, &live)
                    .map_err(|e| EmbedError::Transport { message: e.to_string() })
            }
            None => live().map_err(|message| EmbedError::Transport { message }),
        }
    }
}

impl EmbeddingClient for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut vectors: Vec<Option<Vec<f64>>> =
            texts.iter().map(|t| self.cache_get(t)).collect();
        let misses: Vec<usize> =
            (0..texts.len()).filter(|&i| vectors[i].is_none()).collect();
        if !misses.is_empty() {
            let asked: Vec<String> = misses.iter().map(|&i| texts[i].clone()).collect();
            let body = self.fetch_body(&asked)?;
            let parsed: WireResponse = serde_json::from_str(&body)
                .map_err(|e| EmbedError::Transport { message: format!("undecodable body: {e}") })?;
            if parsed.data.len() != misses.len() {
                return Err(EmbedError::Cardinality {
                    expected: misses.len(),
                    got: parsed.data.len(),
                });
            }
            for (&slot, wire) in misses.iter().zip(parsed.data) {
                self.cache_put(&texts[slot], &wire.embedding);
                vectors[slot] = Some(wire.embedding);
            }
        }
        Ok(vectors.into_iter().map(|v| v.expect("every slot filled")).collect())
    }
}

/// Serves embeddings from a preloaded table, treating each text as a key.
/// The offline counterpart of [`HttpEmbedder`] for table-backed stages.
pub struct TableEmbedder {
    table: EmbeddingTable,
}

impl TableEmbedder {
    pub fn new(table: EmbeddingTable) -> Self {
        TableEmbedder { table }
    }
}

impl EmbeddingClient for TableEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|text| self.table.require(text).map(|v| v.to_vec()))
            .collect()
    }
}
