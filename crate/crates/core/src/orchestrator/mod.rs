//! One end-to-end edit step and hyperparameter sweeps over it.

mod sweep;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ContinuationState, DenoiseRequest, Denoiser, Stage};
use crate::hints::{canny_edges, composite_hints, CannyParams, EdgeMap, HintError, HintLayer};
use crate::imageops::{blend, resize, ImageOpsError, ResampleFilter};
use crate::mask::{analyze_context, scale_bbox, soft_masks_for, ContextAnalysis, MaskError, SoftMasks};
use crate::model::{
    quantize, BoundingBox, Channels, ContextMask, EditConfig, EditStep, ImageBuffer, ModelError,
    Provenance, StepInputs,
};

pub use sweep::{
    contact_sheet, run_sweep, SweepAxis, SweepCell, SweepCellRecord, SweepOptions, SweepResult,
    SweepSidecar,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(#[source] ModelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Hint(#[from] HintError),
    #[error(transparent)]
    ImageOps(#[from] ImageOpsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{stage} stage failed: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("mask is {mask:?} but the image is {image:?}")]
    MaskDimensions { mask: (u32, u32), image: (u32, u32) },
    #[error("step cancelled")]
    Cancelled,
    #[error("invalid sweep: {0}")]
    Sweep(String),
}

/// Split of denoising steps between the edge-conditioned and base stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub canny_steps: u32,
    pub base_steps: u32,
    pub total: u32,
}

pub fn validate_schedule(canny_steps: u32, base_steps: u32) -> Result<StepSchedule, PipelineError> {
    let total = canny_steps
        .checked_add(base_steps)
        .ok_or(PipelineError::Config(ModelError::OutOfRange {
            field: "total_steps",
            value: f64::from(canny_steps) + f64::from(base_steps),
            range: "u32",
        }))?;
    if total == 0 {
        return Err(PipelineError::Config(ModelError::NoSteps));
    }
    Ok(StepSchedule {
        canny_steps,
        base_steps,
        total,
    })
}

/// Knobs that are not part of the persisted edit configuration.
#[derive(Debug, Clone, Default)]
pub struct StepOptions {
    /// Scales the extended box about its centre before re-extension.
    pub context_scale: Option<f64>,
    pub canny: CannyParams,
    /// Checked before each backend call.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl StepOptions {
    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
    }
}

/// An edit step together with the intermediates that produced it.
#[derive(Debug, Clone)]
pub struct StepRun {
    pub step: EditStep,
    pub analysis: ContextAnalysis,
    pub masks: SoftMasks,
    /// Hinted crop at working resolution, as sent to the backend.
    pub working_crop: ImageBuffer,
    pub edges: Option<EdgeMap>,
    /// Backend output at working resolution.
    pub working_result: ImageBuffer,
}

pub fn run_edit_step(
    active: &Arc<ImageBuffer>,
    mask: &ContextMask,
    hints: &[HintLayer],
    config: &EditConfig,
    backend: &dyn Denoiser,
    options: &StepOptions,
) -> Result<EditStep, PipelineError> {
    run_edit_step_detailed(active, mask, hints, config, backend, options).map(|r| r.step)
}

/// Rebuilds a raster with `like`'s channel layout from an RGB image,
/// taking alpha from `like`.
fn match_channels(rgb: &ImageBuffer, like: &ImageBuffer) -> Result<ImageBuffer, ModelError> {
    match like.channels() {
        Channels::Rgb => Ok(rgb.clone()),
        Channels::Rgba => ImageBuffer::from_fn(rgb.width(), rgb.height(), Channels::Rgba, |x, y, c| {
            if c == 3 {
                like.sample(x, y, 3)
            } else {
                rgb.sample(x, y, c)
            }
        }),
        Channels::Gray => ImageBuffer::from_fn(rgb.width(), rgb.height(), Channels::Gray, |x, y, _| {
            let p = rgb.pixel(x, y);
            let luma = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            quantize(luma / 255.0)
        }),
    }
}

pub fn run_edit_step_detailed(
    active: &Arc<ImageBuffer>,
    mask: &ContextMask,
    hints: &[HintLayer],
    config: &EditConfig,
    backend: &dyn Denoiser,
    options: &StepOptions,
) -> Result<StepRun, PipelineError> {
    let started = Instant::now();
    config.validate().map_err(PipelineError::Config)?;
    let schedule = validate_schedule(config.canny_steps, config.base_steps)?;
    if mask.dims() != active.dims() {
        return Err(PipelineError::MaskDimensions {
            mask: mask.dims(),
            image: active.dims(),
        });
    }
    let target = config.target_resolution;
    let ablation = config.ablation;

    let mut analysis = analyze_context(mask, config.dot_area_max, target, ablation.disable_context_dots)?;
    if let Some(factor) = options.context_scale {
        let (scaled, clamped) = scale_bbox(
            analysis.extended_bbox,
            analysis.context_bbox,
            factor,
            target.dims(),
            active.dims(),
        )?;
        analysis.extended_bbox = scaled;
        analysis.clamped = clamped;
    }
    let region: BoundingBox = analysis.extended_bbox;

    let hinted = if ablation.disable_hints || hints.is_empty() {
        Arc::clone(active)
    } else {
        Arc::new(composite_hints(active, hints)?)
    };

    let source_crop = hinted.crop(region)?.to_rgb();
    let (tw, th) = target.dims();
    let working_crop = resize(
        &source_crop,
        tw,
        th,
        ResampleFilter::for_raster(source_crop.dims(), (tw, th)),
    )?;
    let masks = soft_masks_for(
        &analysis.inpaint_mask,
        region,
        (tw, th),
        config.blur_fraction,
        ablation.disable_blur,
    )?;
    let working_soft = masks.working.quantized();

    let edges = if schedule.canny_steps > 0 {
        Some(canny_edges(&working_crop, &options.canny)?)
    } else {
        None
    };

    let mut continuation: Option<ContinuationState> = None;
    let mut digests = Vec::new();
    let mut backend_id = backend.id();
    let stages = [
        (Stage::Canny, schedule.canny_steps),
        (Stage::Base, schedule.base_steps),
    ];
    for (stage, steps) in stages {
        if steps == 0 {
            continue;
        }
        if options.cancelled() {
            return Err(PipelineError::Cancelled);
        }
        let request = DenoiseRequest {
            crop: working_crop.clone(),
            prompt: config.prompt.clone(),
            soft_mask: working_soft.clone(),
            edge_map: if stage == Stage::Canny { edges.clone() } else { None },
            denoising_strength: config.denoising_strength,
            stage_steps: steps,
            total_steps: schedule.total,
            stage,
            seed: config.seed,
            continuation: continuation.take(),
        };
        let response = backend
            .denoise(&request)
            .and_then(|r| r.validate_for(&request).map(|()| r))
            .map_err(|source| PipelineError::Backend { stage, source })?;
        digests.push(response.continuation.digest_hex());
        backend_id = response.backend_id;
        continuation = Some(response.continuation);
    }
    if options.cancelled() {
        return Err(PipelineError::Cancelled);
    }
    let working_result = continuation
        .map(|c| c.intermediate)
        .expect("schedule has at least one stage");

    let (bw, bh) = (region.width(), region.height());
    let back = resize(
        &working_result,
        bw,
        bh,
        ResampleFilter::for_raster((tw, th), (bw, bh)),
    )?;
    let original_crop = active.crop(region)?;
    let edited = match_channels(&back, &original_crop)?;
    let blended = blend(&original_crop, &edited, &masks.source)?;
    let mut result = (**active).clone();
    result.paste(&blended, region.x0, region.y0)?;

    let step = EditStep {
        index: 0,
        inputs: StepInputs {
            original: Arc::clone(active),
            context_mask: Arc::new(mask.mask().clone()),
            hinted,
        },
        config: config.clone(),
        region,
        result: Arc::new(result),
        provenance: Provenance::new(backend_id, started.elapsed(), digests),
    };
    Ok(StepRun {
        step,
        analysis,
        masks,
        working_crop,
        edges,
        working_result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{mock_noise, MockDenoiser};
    use crate::hints::HintKind;
    use crate::model::{BinaryMask, EditSession, Resolution};

    fn scene(w: u32, h: u32) -> Arc<ImageBuffer> {
        Arc::new(
            ImageBuffer::from_fn(w, h, Channels::Rgb, |x, y, c| {
                ((x * 3 + y * 7 + c as u32 * 40) % 200 + 20) as u8
            })
            .unwrap(),
        )
    }

    fn small_config() -> EditConfig {
        EditConfig {
            prompt: "a red ball".into(),
            target_resolution: Resolution::new(64, 64).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn schedule_validation() {
        assert_eq!(validate_schedule(5, 25).unwrap().total, 30);
        assert_eq!(validate_schedule(0, 30).unwrap().canny_steps, 0);
        assert!(validate_schedule(0, 0).is_err());
    }

    #[test]
    fn outside_soft_support_is_untouched() {
        let img = scene(200, 150);
        let mut m = BinaryMask::empty(200, 150).unwrap();
        m.fill_rect(60, 50, 100, 90);
        m.fill_rect(10, 10, 12, 12);
        let run = run_edit_step_detailed(
            &img,
            &ContextMask::new(m),
            &[],
            &small_config(),
            &MockDenoiser::new(),
            &StepOptions::default(),
        )
        .unwrap();
        let region = run.step.region;
        let mut changed = 0;
        for y in 0..150 {
            for x in 0..200 {
                let inside = region.contains(x, y)
                    && run.masks.source.get(x - region.x0, y - region.y0) > 0.0;
                if !inside {
                    assert_eq!(run.step.result.pixel(x, y), img.pixel(x, y), "({x},{y})");
                } else if run.step.result.pixel(x, y) != img.pixel(x, y) {
                    changed += 1;
                }
            }
        }
        assert!(changed > 0);
        assert_eq!(run.step.provenance.continuation_digests.len(), 2);
    }

    #[test]
    fn zero_strength_shows_hints_only_inside_soft_region() {
        let img = scene(64, 64);
        let mut m = BinaryMask::empty(64, 64).unwrap();
        m.fill_rect(0, 0, 64, 32);
        let patch = ImageBuffer::from_fn(64, 64, Channels::Rgba, |_, _, c| if c == 0 || c == 3 { 255 } else { 0 }).unwrap();
        let layer = HintLayer::new(HintKind::ColorPatch, patch, 1.0).unwrap();
        let config = EditConfig {
            denoising_strength: 0.0,
            ablation: crate::model::Ablation { disable_blur: true, ..Default::default() },
            ..small_config()
        };
        let step = run_edit_step(&img, &ContextMask::new(m), &[layer], &config, &MockDenoiser::new(), &StepOptions::default()).unwrap();
        // working canvas equals the full image, so the round trip is exact
        assert_eq!(step.region, BoundingBox::full(64, 64));
        assert_eq!(step.result.pixel(5, 5), &[255, 0, 0]);
        assert_eq!(step.result.pixel(5, 40), img.pixel(5, 40));
    }

    #[test]
    fn default_config_matches_two_stage_formula() {
        let img = Arc::new(ImageBuffer::filled(64, 64, &[90, 160, 30]).unwrap());
        let config = small_config();
        let run = run_edit_step_detailed(
            &img,
            &ContextMask::new(BinaryMask::full(64, 64).unwrap()),
            &[],
            &config,
            &MockDenoiser::new(),
            &StepOptions::default(),
        )
        .unwrap();
        let edges = run.edges.as_ref().unwrap();
        assert_eq!(edges.count(), 0);
        let (w1, w2) = (0.9 * 5.0 / 30.0, 0.9 * 25.0 / 30.0);
        for y in 0..64 {
            for x in 0..64 {
                for c in 0..3 {
                    let s = f64::from(img.sample(x, y, c)) / 255.0;
                    let z1 = (1.0 - w1) * s + w1 * mock_noise(0, Stage::Canny, x, y, c);
                    let z2 = (1.0 - w2) * z1 + w2 * mock_noise(0, Stage::Base, x, y, c);
                    let got = f64::from(run.step.result.sample(x, y, c)) / 255.0;
                    assert!((got - z2).abs() <= 1.0 / 255.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let img = scene(120, 90);
        let mut m = BinaryMask::empty(120, 90).unwrap();
        m.fill_rect(30, 30, 70, 60);
        let m = ContextMask::new(m);
        let cfg = EditConfig { seed: 7, ..small_config() };
        let a = run_edit_step(&img, &m, &[], &cfg, &MockDenoiser::new(), &StepOptions::default()).unwrap();
        let b = run_edit_step(&img, &m, &[], &cfg, &MockDenoiser::new(), &StepOptions::default()).unwrap();
        assert_eq!(a.result, b.result);
        let other = run_edit_step(&img, &m, &[], &EditConfig { seed: 8, ..cfg }, &MockDenoiser::new(), &StepOptions::default()).unwrap();
        assert_ne!(a.result, other.result);
    }

    #[test]
    fn each_ablation_changes_output() {
        let img = scene(160, 120);
        let mut m = BinaryMask::empty(160, 120).unwrap();
        m.fill_rect(60, 40, 100, 80);
        m.fill_rect(10, 10, 13, 13);
        m.fill_rect(150, 110, 153, 113);
        let m = ContextMask::new(m);
        let mut patch = ImageBuffer::filled(160, 120, &[0, 0, 0, 0]).unwrap();
        for y in 50..70 {
            for x in 70..90 {
                let i = patch.index(x, y);
                patch.data_mut()[i..i + 4].copy_from_slice(&[0, 0, 255, 255]);
            }
        }
        let hints = [HintLayer::new(HintKind::ColorPatch, patch, 0.8).unwrap()];
        let base_cfg = small_config();
        let run = |cfg: &EditConfig| {
            run_edit_step(&img, &m, &hints, cfg, &MockDenoiser::new(), &StepOptions::default()).unwrap().result
        };
        let canonical = run(&base_cfg);
        let mut variants = Vec::new();
        let mut c = base_cfg.clone();
        c.ablation.disable_context_dots = true;
        variants.push(("dots", c));
        let mut c = base_cfg.clone();
        c.ablation.disable_blur = true;
        variants.push(("blur", c));
        let mut c = base_cfg.clone();
        c.ablation.disable_hints = true;
        variants.push(("hints", c));
        let mut c = base_cfg.clone();
        c.ablation.disable_canny_stage = true;
        c.canny_steps = 0;
        c.base_steps = 30;
        variants.push(("canny", c));
        for (name, cfg) in variants {
            assert_ne!(run(&cfg), canonical, "ablation {name} had no effect");
        }
    }

    #[test]
    fn inconsistent_ablation_is_rejected() {
        let img = scene(64, 64);
        let mut cfg = small_config();
        cfg.ablation.disable_canny_stage = true;
        let err = run_edit_step(
            &img,
            &ContextMask::new(BinaryMask::full(64, 64).unwrap()),
            &[],
            &cfg,
            &MockDenoiser::new(),
            &StepOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("inconsistent ablation"));
    }

    #[test]
    fn cancelled_before_backend() {
        let img = scene(64, 64);
        let cancel = Arc::new(AtomicBool::new(true));
        let err = run_edit_step(
            &img,
            &ContextMask::new(BinaryMask::full(64, 64).unwrap()),
            &[],
            &small_config(),
            &MockDenoiser::new(),
            &StepOptions { cancel: Some(cancel), ..Default::default() },
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::Cancelled));
    }

    #[test]
    fn twenty_disjoint_steps_leave_the_rest_alone() {
        let img0 = scene(256, 256);
        let mut session = EditSession::with_base("iter", Arc::clone(&img0));
        let mut support = BinaryMask::empty(256, 256).unwrap();
        let cfg = EditConfig { target_resolution: Resolution::new(64, 64).unwrap(), ..small_config() };
        for k in 0..20u32 {
            let (gx, gy) = (k % 5, k / 5);
            let mut m = BinaryMask::empty(256, 256).unwrap();
            let (x0, y0) = (gx * 50 + 14, gy * 60 + 16);
            m.fill_rect(x0, y0, x0 + 10, y0 + 10);
            let active = Arc::clone(session.active_image());
            let run = run_edit_step_detailed(&active, &ContextMask::new(m), &[], &EditConfig { seed: u64::from(k), ..cfg.clone() }, &MockDenoiser::new(), &StepOptions::default()).unwrap();
            let r = run.step.region;
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    if run.masks.source.get(x - r.x0, y - r.y0) > 0.0 {
                        support.set(x, y, true);
                    }
                }
            }
            session.commit_step(run.step).unwrap();
        }
        let last = session.active_image();
        for y in 0..256 {
            for x in 0..256 {
                if !support.get(x, y) {
                    assert_eq!(last.pixel(x, y), img0.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn rgba_alpha_is_preserved() {
        let img = Arc::new(ImageBuffer::from_fn(64, 64, Channels::Rgba, |x, _, c| if c == 3 { 100 + x as u8 } else { 50 }).unwrap());
        let step = run_edit_step(
            &img,
            &ContextMask::new(BinaryMask::full(64, 64).unwrap()),
            &[],
            &small_config(),
            &MockDenoiser::new(),
            &StepOptions::default(),
        )
        .unwrap();
        for x in 0..64 {
            assert_eq!(step.result.sample(x, 3, 3), 100 + x as u8);
        }
    }
}
