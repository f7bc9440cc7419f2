//! JSON wire format for `POST /v1/denoise`. Rasters travel as base64 PNG.

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BackendError, ContinuationState, DenoiseRequest, DenoiseResponse, Denoiser, Stage};
use crate::hints::EdgeMap;
use crate::imageops;
use crate::model::{ImageBuffer, SoftMask};

pub use super::embed::{serve_embed, EmbedRequestWire, EmbedResponseWire};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequestWire {
    pub crop_png: String,
    /// Grayscale; 0..=255 maps onto [0, 1].
    pub mask_png: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_png: Option<String>,
    pub prompt: String,
    pub strength: f64,
    pub stage: Stage,
    pub stage_steps: u32,
    pub total_steps: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation_png: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponseWire {
    pub result_png: String,
    pub continuation_digest: String,
    pub backend_id: String,
}

fn b64_png(image: &ImageBuffer) -> Result<String, BackendError> {
    let png = imageops::encode_png(image).map_err(|e| BackendError::Contract(e.to_string()))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(png))
}

fn png_b64(field: &str, data: &str) -> Result<ImageBuffer, BackendError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(data)
        .map_err(|e| BackendError::Malformed(format!("{field}: invalid base64: {e}")))?;
    imageops::decode_png(&bytes).map_err(|e| BackendError::Malformed(format!("{field}: {e}")))
}

/// Serializes a request. The soft mask is sent at 8-bit precision.
pub fn encode_request(req: &DenoiseRequest) -> Result<DenoiseRequestWire, BackendError> {
    Ok(DenoiseRequestWire {
        crop_png: b64_png(&req.crop)?,
        mask_png: b64_png(&req.soft_mask.to_gray())?,
        edge_png: req.edge_map.as_ref().map(|e| b64_png(&e.to_image())).transpose()?,
        prompt: req.prompt.clone(),
        strength: req.denoising_strength,
        stage: req.stage,
        stage_steps: req.stage_steps,
        total_steps: req.total_steps,
        seed: req.seed,
        continuation_png: req
            .continuation
            .as_ref()
            .map(|c| b64_png(&c.intermediate))
            .transpose()?,
        continuation_digest: req.continuation.as_ref().map(|c| c.digest_hex()),
    })
}

fn parse_digest(hex_digest: &str) -> Result<[u8; 32], BackendError> {
    let bytes = hex::decode(hex_digest)
        .map_err(|e| BackendError::Malformed(format!("digest is not hex: {e}")))?;
    bytes
        .try_into()
        .map_err(|_| BackendError::Malformed("digest must be 32 bytes".into()))
}

pub fn decode_request(wire: &DenoiseRequestWire) -> Result<DenoiseRequest, BackendError> {
    let crop = png_b64("crop_png", &wire.crop_png)?;
    let mask = png_b64("mask_png", &wire.mask_png)?;
    let soft_mask = SoftMask::from_gray(&mask)
        .map_err(|e| BackendError::Contract(format!("mask_png: {e}")))?;
    let edge_map = wire
        .edge_png
        .as_deref()
        .map(|e| {
            let img = png_b64("edge_png", e)?;
            crate::model::BinaryMask::from_gray(&img)
                .map(EdgeMap::new)
                .map_err(|e| BackendError::Contract(format!("edge_png: {e}")))
        })
        .transpose()?;
    let continuation = match (&wire.continuation_png, &wire.continuation_digest) {
        (Some(png), digest) => {
            let state = ContinuationState::new(png_b64("continuation_png", png)?);
            if let Some(d) = digest {
                if parse_digest(d)? != state.digest {
                    return Err(BackendError::Contract("continuation digest mismatch".into()));
                }
            }
            Some(state)
        }
        (None, Some(_)) => {
            return Err(BackendError::Contract(
                "continuation digest without continuation image".into(),
            ))
        }
        (None, None) => None,
    };
    let req = DenoiseRequest {
        crop,
        prompt: wire.prompt.clone(),
        soft_mask,
        edge_map,
        denoising_strength: wire.strength,
        stage_steps: wire.stage_steps,
        total_steps: wire.total_steps,
        stage: wire.stage,
        seed: wire.seed,
        continuation,
    };
    req.validate()?;
    Ok(req)
}

pub fn encode_response(resp: &DenoiseResponse) -> Result<DenoiseResponseWire, BackendError> {
    Ok(DenoiseResponseWire {
        result_png: b64_png(&resp.result)?,
        continuation_digest: resp.continuation.digest_hex(),
        backend_id: resp.backend_id.clone(),
    })
}

/// Decodes a response; the result image doubles as the continuation state and
/// must match the reported digest.
pub fn decode_response(wire: &DenoiseResponseWire) -> Result<DenoiseResponse, BackendError> {
    let result = png_b64("result_png", &wire.result_png)?;
    let continuation = ContinuationState::new(result.clone());
    if parse_digest(&wire.continuation_digest)? != continuation.digest {
        return Err(BackendError::Malformed(
            "continuation digest does not match result image".into(),
        ));
    }
    Ok(DenoiseResponse {
        result,
        continuation,
        backend_id: wire.backend_id.clone(),
    })
}

/// Runs `denoiser` on a wire request and encodes its reply.
pub fn serve_denoise(
    denoiser: &dyn Denoiser,
    wire: &DenoiseRequestWire,
) -> Result<DenoiseResponseWire, BackendError> {
    let req = decode_request(wire)?;
    let resp = denoiser.denoise(&req)?;
    encode_response(&resp)
}
