//! Backend-agnostic engine for iterative, mask-guided image editing.
//!
//! The pipeline for one edit step: classify context dots in the user mask,
//! extend the bounding box to the model's aspect ratio, composite color/edge
//! hints, crop and resize to the working canvas, extract Canny edges, run an
//! edge-conditioned denoising stage followed by a base stage, then resize back
//! and soft-composite into the active image. Pixels whose soft mask is exactly
//! zero are never touched.

pub mod backend;
pub mod hints;
pub mod imageops;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod rng;

pub use model::{
    BinaryMask, BoundingBox, Channels, ContextMask, EditConfig, EditSession, EditStep,
    ImageBuffer, Resolution, SoftMask,
};
