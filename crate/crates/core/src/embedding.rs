//! Text embedders: an offline hashed bag-of-tokens model and an HTTP client
//! for an external embedding service.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{EmbeddingVector, VectorError};

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_EMBED_TOKEN_ENV: &str = "FUSIONRAG_EMBED_TOKEN";

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed blank text")]
    EmptyText,
    #[error("text has no alphanumeric tokens to embed")]
    NoTokens,
    #[error("embedding provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("embedding provider unreachable: {0}")]
    Transport(String),
    #[error("embedding provider response malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

fn default_embed_token_env() -> String {
    DEFAULT_EMBED_TOKEN_ENV.to_string()
}

fn default_timeout_s() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Hashed {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Http {
        endpoint_url: String,
        model: String,
        dimension: usize,
        #[serde(default = "default_embed_token_env")]
        token_env: String,
        #[serde(default = "default_timeout_s")]
        timeout_s: u64,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashed {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EmbedderConfig {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderConfig::Hashed { dimension } | EmbedderConfig::Http { dimension, .. } => {
                *dimension
            }
        }
    }

    /// Stable fingerprint used to refuse loading an index built by a
    /// different embedder. The token env name does not change vectors and is
    /// left out.
    pub fn fingerprint(&self) -> String {
        let canonical = match self {
            EmbedderConfig::Hashed { dimension } => format!("hashed-fnv1a64:{dimension}"),
            EmbedderConfig::Http {
                endpoint_url,
                model,
                dimension,
                ..
            } => format!("http:{endpoint_url}:{model}:{dimension}"),
        };
        hex::encode(&Sha256::digest(canonical.as_bytes())[..16])
    }

    pub fn build(&self) -> Box<dyn Embedder> {
        match self {
            EmbedderConfig::Hashed { dimension } => Box::new(HashedEmbedder::new(*dimension)),
            EmbedderConfig::Http { .. } => Box::new(HttpEmbedder::new(self.clone())),
        }
    }
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn config(&self) -> &EmbedderConfig;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn dimension(&self) -> usize {
        self.config().dimension()
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Counts tokens into `dimension` buckets by FNV-1a hash and L2-normalizes.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    config: EmbedderConfig,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            config: EmbedderConfig::Hashed { dimension },
        }
    }

    pub fn embed_sync(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let dimension = self.config.dimension();
        let mut counts = vec![0.0; dimension];
        let mut any = false;
        for token in tokenize(text) {
            let bucket = (fnv1a64(token.as_bytes()) % dimension as u64) as usize;
            counts[bucket] += 1.0;
            any = true;
        }
        if !any {
            return Err(EmbedError::NoTokens);
        }
        Ok(EmbeddingVector::normalized(counts)?)
    }
}

#[async_trait]
impl Embedder for HashedEmbedder {
    fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.embed_sync(text)
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct HttpEmbedder {
    config: EmbedderConfig,
    http: reqwest::Client,
}

#[derive(Deserialize)]
struct EmbeddingsReply {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(config: EmbedderConfig) -> Self {
        Self {
            config,
            http: reqwest::Client::new(),
        }
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let EmbedderConfig::Http {
            endpoint_url,
            model,
            dimension,
            token_env,
            timeout_s,
        } = &self.config
        else {
            unreachable!("HttpEmbedder built from a non-http config");
        };

        crate::note_outbound_request();
        let mut req = self
            .http
            .post(endpoint_url)
            .timeout(Duration::from_secs(*timeout_s))
            .json(&serde_json::json!({ "model": model, "input": text }));
        if let Ok(token) = std::env::var(token_env) {
            if !token.is_empty() {
                req = req.bearer_auth(token);
            }
        }
        let resp = req
            .send()
            .await
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .await
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(EmbedError::Provider {
                status,
                body: excerpt(&body),
            });
        }
        let reply: EmbeddingsReply =
            serde_json::from_str(&body).map_err(|e| EmbedError::Malformed(e.to_string()))?;
        let values = reply
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Malformed("no embedding in response".into()))?
            .embedding;
        if values.len() != *dimension {
            return Err(VectorError::DimensionMismatch {
                expected: *dimension,
                actual: values.len(),
            }
            .into());
        }
        Ok(EmbeddingVector::normalized(values)?)
    }
}

pub(crate) fn excerpt(body: &str) -> String {
    const LIMIT: usize = 512;
    match body.char_indices().nth(LIMIT) {
        Some((cut, _)) => format!("{}…", &body[..cut]),
        None => body.to_string(),
    }
}
