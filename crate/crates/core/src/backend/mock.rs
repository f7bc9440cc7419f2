use super::{BackendError, ContinuationState, DenoiseRequest, DenoiseResponse, Denoiser, Stage};
use crate::model::{dequantize, quantize, ImageBuffer};
use crate::rng::{mix, u64_to_unit};

pub const NOISE_SEED_MULTIPLIER: u64 = 0x9E37_79B9_7F4A_7C15;

/// Noise sample for one pixel channel, in `[0, 1)`.
pub fn mock_noise(seed: u64, stage: Stage, x: u32, y: u32, c: usize) -> f64 {
    let key = seed.wrapping_mul(NOISE_SEED_MULTIPLIER)
        ^ (stage.index() << 48)
        ^ (u64::from(y) << 24)
        ^ (u64::from(x) << 2)
        ^ c as u64;
    u64_to_unit(mix(key))
}

/// Deterministic stand-in for a diffusion backend.
///
/// Each stage blends its starting raster towards a seeded noise field with
/// weight `strength · stage_steps / total_steps`, only where the soft mask is
/// on; the Canny stage leaves edge pixels untouched.
#[derive(Debug, Clone, Default)]
pub struct MockDenoiser {
    id: String,
}

impl MockDenoiser {
    pub fn new() -> Self {
        Self { id: "mock".into() }
    }

    pub fn with_id(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }
}

impl Denoiser for MockDenoiser {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<DenoiseResponse, BackendError> {
        req.validate()?;
        let start = req
            .continuation
            .as_ref()
            .map_or(&req.crop, |c| &c.intermediate);
        let w = req.denoising_strength * f64::from(req.stage_steps) / f64::from(req.total_steps);
        let cc = start.channels().count();
        let mut data = start.data().to_vec();
        for y in 0..start.height() {
            for x in 0..start.width() {
                if req.stage == Stage::Canny
                    && req.edge_map.as_ref().is_some_and(|e| e.get(x, y))
                {
                    continue;
                }
                let soft = req.soft_mask.get(x, y);
                let i = start.index(x, y);
                for c in 0..cc {
                    let s = dequantize(data[i + c]);
                    let n = mock_noise(req.seed, req.stage, x, y, c);
                    let blended = (1.0 - w) * s + w * n;
                    data[i + c] = quantize(soft * blended + (1.0 - soft) * s);
                }
            }
        }
        let result = ImageBuffer::from_raw(start.width(), start.height(), start.channels(), data)
            .map_err(|e| BackendError::Contract(e.to_string()))?;
        Ok(DenoiseResponse {
            continuation: ContinuationState::new(result.clone()),
            result,
            backend_id: self.id.clone(),
        })
    }
}
