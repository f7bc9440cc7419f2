//! Denoising and embedding service contracts, plus mock and HTTP
//! implementations.

mod embed;
mod http;
mod mock;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hints::EdgeMap;
use crate::model::{ImageBuffer, SoftMask};

pub use embed::{
    content_hash_image, content_hash_text, cosine, serve_embed, EmbeddingVector, Embedder,
    HttpEmbedder, MockEmbedder, MOCK_EMBEDDING_DIM,
};
pub use http::HttpDenoiser;
pub use mock::{mock_noise, MockDenoiser, NOISE_SEED_MULTIPLIER};

#[derive(Debug, Error)]
pub enum BackendError {
    /// The request or response breaks the denoiser contract.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("backend configuration error: {0}")]
    Configuration(String),
    #[error("backend unreachable after {attempts} attempt(s): {message}")]
    Transport {
        message: String,
        retryable: bool,
        attempts: u32,
    },
    #[error("backend returned HTTP {status}: {message}")]
    Remote { status: u16, message: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("empty embedding input")]
    EmptyInput,
    /// Injected failure, used to exercise error paths.
    #[error("simulated backend fault: {0}")]
    Fault(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { retryable, .. } => *retryable,
            BackendError::Remote { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Canny,
    Base,
}

impl Stage {
    /// Domain separator mixed into the noise key.
    pub fn index(self) -> u64 {
        match self {
            Stage::Canny => 0,
            Stage::Base => 1,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Canny => "canny",
            Stage::Base => "base",
        })
    }
}

/// Intermediate state handed from one stage to the next, carried as a decoded
/// image plus its digest.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationState {
    pub intermediate: ImageBuffer,
    pub digest: [u8; 32],
}

impl ContinuationState {
    pub fn new(intermediate: ImageBuffer) -> Self {
        let digest = intermediate.digest();
        Self {
            intermediate,
            digest,
        }
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseRequest {
    pub crop: ImageBuffer,
    pub prompt: String,
    pub soft_mask: SoftMask,
    /// Present exactly for the Canny stage.
    pub edge_map: Option<EdgeMap>,
    pub denoising_strength: f64,
    pub stage_steps: u32,
    pub total_steps: u32,
    pub stage: Stage,
    pub seed: u64,
    pub continuation: Option<ContinuationState>,
}

impl DenoiseRequest {
    /// Checks the request-side contract invariants.
    pub fn validate(&self) -> Result<(), BackendError> {
        let dims = self.crop.dims();
        if self.soft_mask.dims() != dims {
            return Err(BackendError::Contract(format!(
                "soft mask is {:?}, crop is {:?}",
                self.soft_mask.dims(),
                dims
            )));
        }
        match (&self.edge_map, self.stage) {
            (None, Stage::Canny) => {
                return Err(BackendError::Contract(
                    "canny stage requires an edge map".into(),
                ))
            }
            (Some(_), Stage::Base) => {
                return Err(BackendError::Contract(
                    "base stage must not carry an edge map".into(),
                ))
            }
            (Some(e), _) if e.dims() != dims => {
                return Err(BackendError::Contract(format!(
                    "edge map is {:?}, crop is {:?}",
                    e.dims(),
                    dims
                )))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.denoising_strength) {
            return Err(BackendError::Contract(format!(
                "denoising strength {} outside [0, 1]",
                self.denoising_strength
            )));
        }
        if self.stage_steps == 0 || self.total_steps < self.stage_steps {
            return Err(BackendError::Contract(format!(
                "invalid step split {}/{}",
                self.stage_steps, self.total_steps
            )));
        }
        if let Some(cont) = &self.continuation {
            if cont.intermediate.dims() != dims
                || cont.intermediate.channels() != self.crop.channels()
            {
                return Err(BackendError::Contract(
                    "continuation does not match the crop".into(),
                ));
            }
            if cont.intermediate.digest() != cont.digest {
                return Err(BackendError::Contract("continuation digest mismatch".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResponse {
    pub result: ImageBuffer,
    pub continuation: ContinuationState,
    pub backend_id: String,
}

impl DenoiseResponse {
    /// Checks the response against the request it answers.
    pub fn validate_for(&self, request: &DenoiseRequest) -> Result<(), BackendError> {
        if self.result.dims() != request.crop.dims() {
            return Err(BackendError::Contract(format!(
                "result is {:?}, request crop is {:?}",
                self.result.dims(),
                request.crop.dims()
            )));
        }
        if self.result.channels() != request.crop.channels() {
            return Err(BackendError::Contract(format!(
                "result has {:?} channels, crop has {:?}",
                self.result.channels(),
                request.crop.channels()
            )));
        }
        Ok(())
    }
}

/// A service that runs one denoising stage.
pub trait Denoiser: Send + Sync {
    fn id(&self) -> String;
    fn denoise(&self, request: &DenoiseRequest) -> Result<DenoiseResponse, BackendError>;
}

impl<T: Denoiser + ?Sized> Denoiser for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn denoise(&self, request: &DenoiseRequest) -> Result<DenoiseResponse, BackendError> {
        (**self).denoise(request)
    }
}

/// Selects a denoiser from a `mock` / URL specifier.
pub fn denoiser_from_spec(spec: &str) -> Result<Box<dyn Denoiser>, BackendError> {
    if spec == "mock" {
        Ok(Box::new(MockDenoiser::new()))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(HttpDenoiser::new(spec)?))
    } else {
        Err(BackendError::Configuration(format!(
            "backend must be 'mock' or an http(s) URL, got '{spec}'"
        )))
    }
}

pub fn embedder_from_spec(spec: &str) -> Result<Box<dyn Embedder>, BackendError> {
    if spec == "mock" {
        Ok(Box::new(MockEmbedder))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(HttpEmbedder::new(spec)?))
    } else {
        Err(BackendError::Configuration(format!(
            "embedder must be 'mock' or an http(s) URL, got '{spec}'"
        )))
    }
}
