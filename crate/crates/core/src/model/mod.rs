//! Domain types, configuration defaults and the editing-session state machine.

mod config;
mod project;
mod raster;
mod session;

use thiserror::Error;

pub use config::{Ablation, EditConfig};
pub use project::{load_project, save_project, ProjectError, MANIFEST_FILE, SCHEMA_VERSION};
pub use raster::{
    dequantize, quantize, BinaryMask, BoundingBox, Channels, ContextMask, ImageBuffer, Resolution,
    SoftMask,
};
pub use session::{EditSession, EditStep, Provenance, StepInputs};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("buffer holds {actual} samples, expected {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("unsupported channel count {0}")]
    ChannelCount(usize),
    #[error("expected {expected:?} channels, got {actual:?}")]
    ChannelMismatch { expected: Channels, actual: Channels },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("invalid bounding box ({x0},{y0})-({x1},{y1})")]
    InvalidBox { x0: u32, y0: u32, x1: u32, y1: u32 },
    #[error("bounding box {bbox:?} lies outside a {width}x{height} image")]
    BoxOutside {
        bbox: BoundingBox,
        width: u32,
        height: u32,
    },
    #[error("soft mask value {0} outside [0, 1]")]
    SoftValue(f64),
    #[error("resolution {width}x{height} invalid: sides must be >= 64 and multiples of 8")]
    Resolution { width: u32, height: u32 },
    #[error("cannot parse resolution {0:?}, expected WxH")]
    ResolutionSyntax(String),
    #[error("unknown ablation flag {0:?}")]
    UnknownAblation(String),
    #[error("{field} = {value} is outside {range}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("canny_steps + base_steps must be at least 1")]
    NoSteps,
    #[error("inconsistent ablation: disable_canny_stage requires canny_steps = 0")]
    InconsistentAblation,
    #[error("step input does not match the session's active image")]
    StaleInput,
    #[error("step {requested} out of range for a session with {count} steps")]
    StepOutOfRange { requested: isize, count: usize },
}
