//! Text embeddings for drug descriptions and mechanism texts.
//!
//! Two providers sit behind [`Embedder`]: a remote HTTP embedding service and
//! an offline feature-hashing embedder over character 3-grams. Every vector is
//! L2-normalized on construction, so cosine similarity reduces to comparing
//! directions.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::hash::Hasher;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("embedding has no usable features")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("hashed embedder needs dim >= 8, got {0}")]
    DimTooSmall(usize),
    #[error("remote embedding failed after {attempts} attempts: {detail}")]
    Remote { attempts: usize, detail: String },
    #[error("embedding cache {path}: {detail}")]
    Cache { path: String, detail: String },
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// Unit-norm text vector.
///
/// Deserialized values are taken as stored so persisted vectors reload
/// bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TextEmbedding {
    values: Vec<f64>,
}

impl TextEmbedding {
    /// Normalizes `values` to unit length.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Self {
            values: values.into_iter().map(|x| x / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cosine similarity of raw vectors, clamped to [−1, 1]; 0 when either side
/// is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn cosine_sim(a: &TextEmbedding, b: &TextEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(cosine(&a.values, &b.values))
}

/// Trim, collapse internal whitespace, lowercase.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "lowercase")]
pub enum EmbeddingConfig {
    Hashed {
        #[serde(default = "default_hashed_dim")]
        dim: usize,
        #[serde(default)]
        cache_path: Option<PathBuf>,
    },
    Remote {
        endpoint: String,
        model: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_retries")]
        max_retries: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        cache_path: Option<PathBuf>,
    },
}

fn default_hashed_dim() -> usize {
    64
}
fn default_retries() -> usize {
    2
}
fn default_timeout() -> u64 {
    30
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashed {
            dim: default_hashed_dim(),
            cache_path: None,
        }
    }
}

impl EmbeddingConfig {
    pub fn hashed(dim: usize) -> Self {
        EmbeddingConfig::Hashed {
            dim,
            cache_path: None,
        }
    }

    fn cache_path(&self) -> Option<&PathBuf> {
        match self {
            EmbeddingConfig::Hashed { cache_path, .. } | EmbeddingConfig::Remote { cache_path, .. } => {
                cache_path.as_ref()
            }
        }
    }

    fn identity(&self) -> String {
        match self {
            EmbeddingConfig::Hashed { dim, .. } => format!("hashed-3gram:{dim}"),
            EmbeddingConfig::Remote { endpoint, model, .. } => format!("remote:{endpoint}:{model}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    values: Vec<f64>,
}

/// Embedding provider with an in-memory memo and an optional append-only
/// cache file. Safe to share across threads.
pub struct Embedder {
    config: EmbeddingConfig,
    identity: String,
    memo: Mutex<HashMap<String, TextEmbedding>>,
    cache_file: Option<Mutex<File>>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder").field("identity", &self.identity).finish()
    }
}

impl Embedder {
    pub fn new(config: EmbeddingConfig) -> Result<Self> {
        if let EmbeddingConfig::Hashed { dim, .. } = config {
            if dim < 8 {
                return Err(EmbeddingError::DimTooSmall(dim));
            }
        }
        let identity = config.identity();
        let mut memo = HashMap::new();
        let mut cache_file = None;
        if let Some(path) = config.cache_path() {
            let cache_err = |detail: String| EmbeddingError::Cache {
                path: path.display().to_string(),
                detail,
            };
            if path.exists() {
                let reader = BufReader::new(File::open(path).map_err(|e| cache_err(e.to_string()))?);
                for (i, line) in reader.lines().enumerate() {
                    let line = line.map_err(|e| cache_err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: CacheRecord = serde_json::from_str(&line)
                        .map_err(|e| cache_err(format!("line {}: {e}", i + 1)))?;
                    memo.insert(rec.key, TextEmbedding { values: rec.values });
                }
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| cache_err(e.to_string()))?;
            cache_file = Some(Mutex::new(file));
        }
        Ok(Self {
            config,
            identity,
            memo: Mutex::new(memo),
            cache_file,
        })
    }

    pub fn hashed(dim: usize) -> Result<Self> {
        Self::new(EmbeddingConfig::hashed(dim))
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    /// Output dimension when it is known up front (hashed mode).
    pub fn dim(&self) -> Option<usize> {
        match self.config {
            EmbeddingConfig::Hashed { dim, .. } => Some(dim),
            EmbeddingConfig::Remote { .. } => None,
        }
    }

    fn key(&self, normalized: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.identity.as_bytes());
        h.update([0u8]);
        h.update(normalized.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn embed(&self, text: &str) -> Result<TextEmbedding> {
        let normalized = normalize_text(text);
        if normalized.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let key = self.key(&normalized);
        if let Some(hit) = self.memo.lock().expect("embedding memo poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let embedding = match &self.config {
            EmbeddingConfig::Hashed { dim, .. } => hashed_embedding(&normalized, *dim)?,
            EmbeddingConfig::Remote {
                endpoint,
                model,
                api_key_env,
                max_retries,
                timeout_secs,
                ..
            } => remote_embedding(
                endpoint,
                model,
                api_key_env.as_deref(),
                *max_retries,
                *timeout_secs,
                &normalized,
            )?,
        };
        let mut memo = self.memo.lock().expect("embedding memo poisoned");
        if let Some(hit) = memo.get(&key) {
            return Ok(hit.clone());
        }
        if let Some(file) = &self.cache_file {
            let rec = CacheRecord {
                key: key.clone(),
                values: embedding.values.clone(),
            };
            let mut line = serde_json::to_string(&rec).expect("cache record serializes");
            line.push('\n');
            let mut f = file.lock().expect("embedding cache poisoned");
            f.write_all(line.as_bytes()).map_err(|e| EmbeddingError::Cache {
                path: self.config.cache_path().map(|p| p.display().to_string()).unwrap_or_default(),
                detail: e.to_string(),
            })?;
        }
        memo.insert(key, embedding.clone());
        Ok(embedding)
    }
}

fn fnv(tag: u8, bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&[tag]);
    h.write(bytes);
    h.finish()
}

/// Signed feature hashing of character 3-grams over the text padded with
/// boundary markers. Stateless: a text's vector never depends on what else
/// was embedded.
pub fn hashed_embedding(normalized: &str, dim: usize) -> Result<TextEmbedding> {
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(normalized.chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    let mut values = vec![0.0; dim];
    let mut buf = String::new();
    for gram in chars.windows(3) {
        buf.clear();
        buf.extend(gram);
        let bucket = (fnv(1, buf.as_bytes()) % dim as u64) as usize;
        let sign = if fnv(2, buf.as_bytes()) & 1 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    }
    TextEmbedding::new(values)
}

fn remote_embedding(
    endpoint: &str,
    model: &str,
    api_key_env: Option<&str>,
    max_retries: usize,
    timeout_secs: u64,
    text: &str,
) -> Result<TextEmbedding> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .build()
        .into();
    let body = serde_json::json!({ "model": model, "input": [text] });
    let token = api_key_env.and_then(|name| std::env::var(name).ok());
    let mut detail = String::new();
    let attempts = max_retries + 1;
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
        }
        let mut req = agent.post(endpoint);
        if let Some(t) = &token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        match req.send_json(&body) {
            Ok(mut resp) => match resp.body_mut().read_json::<serde_json::Value>() {
                Ok(json) => match extract_vector(&json) {
                    Some(v) => return TextEmbedding::new(v),
                    None => detail = "response holds no float array".into(),
                },
                Err(e) => detail = e.to_string(),
            },
            Err(e) => detail = e.to_string(),
        }
        log::warn!("embedding request attempt {} failed: {detail}", attempt + 1);
    }
    Err(EmbeddingError::Remote { attempts, detail })
}

/// Accepts `{"data":[{"embedding":[..]}]}`, `{"embeddings":[[..]]}` or a bare
/// `[[..]]`.
fn extract_vector(json: &serde_json::Value) -> Option<Vec<f64>> {
    let first = if let Some(data) = json.get("data") {
        data.get(0)?.get("embedding")?
    } else if let Some(e) = json.get("embeddings") {
        e.get(0)?
    } else {
        json.get(0)?
    };
    first.as_array()?.iter().map(|x| x.as_f64()).collect()
}
