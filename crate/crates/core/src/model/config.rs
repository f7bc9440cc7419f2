use serde::{Deserialize, Serialize};

use super::{ModelError, Resolution};

/// Components of the workflow that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub disable_context_dots: bool,
    pub disable_blur: bool,
    pub disable_hints: bool,
    pub disable_canny_stage: bool,
}

impl Ablation {
    pub const FLAG_NAMES: [&'static str; 4] = [
        "disable_context_dots",
        "disable_blur",
        "disable_hints",
        "disable_canny_stage",
    ];

    /// Sets a flag by its snake_case name (a leading `disable_` is optional).
    pub fn set_by_name(&mut self, name: &str) -> Result<(), ModelError> {
        let key = name.trim().replace('-', "_");
        let key = key.strip_prefix("disable_").unwrap_or(&key);
        match key {
            "context_dots" | "dots" => self.disable_context_dots = true,
            "blur" => self.disable_blur = true,
            "hints" => self.disable_hints = true,
            "canny_stage" | "canny" => self.disable_canny_stage = true,
            _ => return Err(ModelError::UnknownAblation(name.to_owned())),
        }
        Ok(())
    }
}

/// Everything that parameterizes a single edit step.
///
/// Defaults: strength 0.9, 5 edge-conditioned steps followed by 25 base steps,
/// seed 0, patch opacity 0.8, 1216×832 working canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub prompt: String,
    pub denoising_strength: f64,
    pub canny_steps: u32,
    pub base_steps: u32,
    pub seed: u64,
    pub target_resolution: Resolution,
    pub patch_opacity: f64,
    /// Soft-mask sigma as a fraction of the smaller working dimension.
    pub blur_fraction: f64,
    /// Connected components at or below this pixel area count as context dots.
    pub dot_area_max: u32,
    pub ablation: Ablation,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            denoising_strength: 0.9,
            canny_steps: 5,
            base_steps: 25,
            seed: 0,
            target_resolution: Resolution::default(),
            patch_opacity: 0.8,
            blur_fraction: 0.02,
            dot_area_max: 81,
            ablation: Ablation::default(),
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.denoising_strength) {
            return Err(ModelError::OutOfRange {
                field: "denoising_strength",
                value: self.denoising_strength,
                range: "[0, 1]",
            });
        }
        if !(0.0..=1.0).contains(&self.patch_opacity) {
            return Err(ModelError::OutOfRange {
                field: "patch_opacity",
                value: self.patch_opacity,
                range: "[0, 1]",
            });
        }
        if !(self.blur_fraction > 0.0 && self.blur_fraction.is_finite()) {
            return Err(ModelError::OutOfRange {
                field: "blur_fraction",
                value: self.blur_fraction,
                range: "(0, inf)",
            });
        }
        if u64::from(self.canny_steps) + u64::from(self.base_steps) == 0 {
            return Err(ModelError::NoSteps);
        }
        if self.ablation.disable_canny_stage && self.canny_steps > 0 {
            return Err(ModelError::InconsistentAblation);
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u32 {
        self.canny_steps + self.base_steps
    }
}
