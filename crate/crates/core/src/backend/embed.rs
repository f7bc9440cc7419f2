use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackendError;
use crate::imageops;
use crate::model::ImageBuffer;
use crate::rng::{mix, u64_to_unit};

pub const MOCK_EMBEDDING_DIM: usize = 64;

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// L2-normalizes `values`; fails on an empty or zero vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self, BackendError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !(norm > 0.0 && norm.is_finite()) {
            return Err(BackendError::Malformed("zero or non-finite embedding".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub trait Embedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
    fn embed_image(&self, image: &ImageBuffer) -> Result<EmbeddingVector, BackendError>;
}

fn hash_prefix(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_be_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// First 8 bytes (big-endian) of SHA-256 over the UTF-8 text.
pub fn content_hash_text(text: &str) -> u64 {
    hash_prefix(text.as_bytes())
}

/// First 8 bytes (big-endian) of the raster digest.
pub fn content_hash_image(image: &ImageBuffer) -> u64 {
    u64::from_be_bytes(image.digest()[..8].try_into().expect("digest has 32 bytes"))
}

/// Hash-seeded embedding; identical content maps to identical vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEmbedder;

impl MockEmbedder {
    pub fn from_hash(hash: u64) -> EmbeddingVector {
        let raw = (0..MOCK_EMBEDDING_DIM as u64)
            .map(|i| u64_to_unit(mix(hash ^ i)) - 0.5)
            .collect();
        EmbeddingVector::normalized(raw).expect("mock components are not all zero")
    }
}

impl Embedder for MockEmbedder {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        Ok(Self::from_hash(content_hash_text(text)))
    }

    fn embed_image(&self, image: &ImageBuffer) -> Result<EmbeddingVector, BackendError> {
        Ok(Self::from_hash(content_hash_image(image)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequestWire {
    pub kind: String,
    /// Text, or base64 PNG for images.
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponseWire {
    pub dim: usize,
    pub values: Vec<f64>,
}

/// Embedder speaking the `/v1/embed` JSON protocol.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: &str) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .connect_timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| BackendError::Configuration(e.to_string()))?;
        Ok(Self {
            endpoint: format!("{}/v1/embed", base_url.trim_end_matches('/')),
            client,
        })
    }

    fn call(&self, body: &EmbedRequestWire) -> Result<EmbeddingVector, BackendError> {
        let reply: EmbedResponseWire = super::http::post_json(&self.client, &self.endpoint, body, 2)?;
        if reply.dim != reply.values.len() {
            return Err(BackendError::Malformed(format!(
                "dim {} but {} values",
                reply.dim,
                reply.values.len()
            )));
        }
        EmbeddingVector::normalized(reply.values)
    }
}

impl Embedder for HttpEmbedder {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        self.call(&EmbedRequestWire {
            kind: "text".into(),
            payload: text.into(),
        })
    }

    fn embed_image(&self, image: &ImageBuffer) -> Result<EmbeddingVector, BackendError> {
        let png = imageops::encode_png(image).map_err(|e| BackendError::Contract(e.to_string()))?;
        self.call(&EmbedRequestWire {
            kind: "image".into(),
            payload: base64::engine::general_purpose::STANDARD.encode(png),
        })
    }
}

/// Answers an embed request with `embedder`; used by servers.
pub fn serve_embed(
    embedder: &dyn Embedder,
    request: &EmbedRequestWire,
) -> Result<EmbedResponseWire, BackendError> {
    let v = match request.kind.as_str() {
        "text" => embedder.embed_text(&request.payload)?,
        "image" => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(&request.payload)
                .map_err(|e| BackendError::Contract(format!("payload is not base64: {e}")))?;
            let img = imageops::decode_png(&bytes).map_err(|e| BackendError::Contract(e.to_string()))?;
            embedder.embed_image(&img)?
        }
        other => return Err(BackendError::Contract(format!("unknown embed kind '{other}'"))),
    };
    Ok(EmbedResponseWire {
        dim: v.dim(),
        values: v.values().to_vec(),
    })
}
