use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_edit_step, PipelineError, StepOptions};
use crate::backend::Denoiser;
use crate::hints::HintLayer;
use crate::imageops::{resize, ResampleFilter};
use crate::model::{BoundingBox, ContextMask, EditConfig, EditStep, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[serde(alias = "strength")]
    DenoisingStrength,
    CannySteps,
    ContextScale,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::DenoisingStrength => "denoising_strength",
            SweepAxis::CannySteps => "canny_steps",
            SweepAxis::ContextScale => "context_scale",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "strength" | "denoising_strength" => Ok(SweepAxis::DenoisingStrength),
            "canny_steps" | "canny" => Ok(SweepAxis::CannySteps),
            "context_scale" | "context" => Ok(SweepAxis::ContextScale),
            other => Err(PipelineError::Sweep(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Maximum number of cells run concurrently.
    pub jobs: usize,
    pub step: StepOptions,
    /// Height of each contact-sheet cell in pixels.
    pub thumb_height: u32,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            step: StepOptions::default(),
            thumb_height: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: f64,
    pub outcome: Result<EditStep, String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    pub contact_sheet: ImageBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCellRecord {
    pub value: f64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_sha256: Option<String>,
}

/// JSON sidecar describing a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSidecar {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub cells: Vec<SweepCellRecord>,
}

impl SweepResult {
    pub fn succeeded(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_ok()).count()
    }

    pub fn sidecar(&self) -> SweepSidecar {
        SweepSidecar {
            axis: self.axis,
            values: self.cells.iter().map(|c| c.value).collect(),
            cells: self
                .cells
                .iter()
                .map(|c| match &c.outcome {
                    Ok(step) => SweepCellRecord {
                        value: c.value,
                        status: "ok".into(),
                        error: None,
                        region: Some(step.region),
                        result_sha256: Some(step.result.digest_hex()),
                    },
                    Err(e) => SweepCellRecord {
                        value: c.value,
                        status: "error".into(),
                        error: Some(e.clone()),
                        region: None,
                        result_sha256: None,
                    },
                })
                .collect(),
        }
    }
}

fn cell_config(
    base: &EditConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<(EditConfig, Option<f64>), PipelineError> {
    let mut cfg = base.clone();
    let mut scale = None;
    match axis {
        SweepAxis::DenoisingStrength => cfg.denoising_strength = value,
        SweepAxis::CannySteps => {
            let total = base.total_steps();
            if value.fract() != 0.0 || value < 0.0 {
                return Err(PipelineError::Sweep(format!(
                    "canny_steps must be a non-negative integer, got {value}"
                )));
            }
            if value > f64::from(total) {
                return Err(PipelineError::Sweep(format!(
                    "canny_steps {value} exceeds the total of {total} steps"
                )));
            }
            cfg.canny_steps = value as u32;
            cfg.base_steps = total - cfg.canny_steps;
        }
        SweepAxis::ContextScale => scale = Some(value),
    }
    Ok((cfg, scale))
}

/// Runs one edit step per value, all from the same seed and inputs.
///
/// Failed cells are recorded and drawn as placeholders; the sweep itself only
/// fails on invalid arguments.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    active: &Arc<ImageBuffer>,
    mask: &ContextMask,
    hints: &[HintLayer],
    config: &EditConfig,
    backend: &dyn Denoiser,
    axis: SweepAxis,
    values: &[f64],
    options: &SweepOptions,
) -> Result<SweepResult, PipelineError> {
    if values.len() < 2 {
        return Err(PipelineError::Sweep(format!(
            "a sweep needs at least 2 values, got {}",
            values.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Sweep(e.to_string()))?;
    let cells: Vec<SweepCell> = pool.install(|| {
        values
            .par_iter()
            .map(|&value| {
                let outcome = cell_config(config, axis, value).and_then(|(cfg, scale)| {
                    let opts = StepOptions {
                        context_scale: scale.or(options.step.context_scale),
                        ..options.step.clone()
                    };
                    run_edit_step(active, mask, hints, &cfg, backend, &opts)
                });
                SweepCell {
                    value,
                    outcome: outcome.map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    let sheet = contact_sheet(&cells, config, options.thumb_height)?;
    Ok(SweepResult {
        axis,
        cells,
        contact_sheet: sheet,
    })
}

const GAP: u32 = 4;
const GAP_COLOR: [u8; 3] = [32, 32, 32];
const FAILED_COLOR: [u8; 3] = [160, 24, 24];

/// Horizontal strip of the edited regions, in value order, each resized to the
/// working aspect at `thumb_height`; failed cells are solid placeholders.
pub fn contact_sheet(
    cells: &[SweepCell],
    config: &EditConfig,
    thumb_height: u32,
) -> Result<ImageBuffer, PipelineError> {
    let (tw, th) = config.target_resolution.dims();
    let cell_h = thumb_height.max(1);
    let cell_w = ((u64::from(cell_h) * u64::from(tw) + u64::from(th) / 2) / u64::from(th)).max(1) as u32;
    let n = cells.len() as u32;
    let width = n * cell_w + n.saturating_sub(1) * GAP;
    let mut sheet = ImageBuffer::filled(width.max(1), cell_h, &GAP_COLOR)?;
    for (i, cell) in cells.iter().enumerate() {
        let x0 = i as u32 * (cell_w + GAP);
        let tile = match &cell.outcome {
            Ok(step) => {
                let crop = step.result.crop(step.region)?.to_rgb();
                let filter = ResampleFilter::for_raster(crop.dims(), (cell_w, cell_h));
                resize(&crop, cell_w, cell_h, filter)?
            }
            Err(_) => ImageBuffer::filled(cell_w, cell_h, &FAILED_COLOR)?,
        };
        sheet.paste(&tile, x0, 0)?;
    }
    Ok(sheet)
}
