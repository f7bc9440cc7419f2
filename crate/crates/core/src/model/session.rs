use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, BoundingBox, EditConfig, ImageBuffer, ModelError};

/// Rasters a step consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    /// The active image the step started from (I_T).
    pub original: Arc<ImageBuffer>,
    pub context_mask: Arc<BinaryMask>,
    /// The original with hint layers composited in.
    pub hinted: Arc<ImageBuffer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    pub duration_ms: u64,
    /// Hex digests of every continuation state handed back by the backend, in stage order.
    pub continuation_digests: Vec<String>,
}

impl Provenance {
    pub fn new(backend_id: impl Into<String>, duration: Duration, digests: Vec<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            duration_ms: duration.as_millis().min(u128::from(u64::MAX)) as u64,
            continuation_digests: digests,
        }
    }
}

/// One committed backend invocation and its output.
#[derive(Debug, Clone, PartialEq)]
pub struct EditStep {
    pub index: usize,
    pub inputs: StepInputs,
    pub config: EditConfig,
    /// Extended bounding box the step regenerated, in source pixels.
    pub region: BoundingBox,
    pub result: Arc<ImageBuffer>,
    pub provenance: Provenance,
}

/// Linear editing history rooted at a base image.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSession {
    id: String,
    base_image: Arc<ImageBuffer>,
    steps: Vec<EditStep>,
    /// Index of the active step; -1 means the base image is active.
    cursor: isize,
}

impl EditSession {
    pub fn new(id: impl Into<String>, base_image: ImageBuffer) -> Self {
        Self::with_base(id, Arc::new(base_image))
    }

    pub fn with_base(id: impl Into<String>, base_image: Arc<ImageBuffer>) -> Self {
        Self {
            id: id.into(),
            base_image,
            steps: Vec::new(),
            cursor: -1,
        }
    }

    /// Rebuilds a session from parts, checking chain integrity.
    pub fn from_parts(
        id: impl Into<String>,
        base_image: Arc<ImageBuffer>,
        steps: Vec<EditStep>,
        cursor: isize,
    ) -> Result<Self, ModelError> {
        let mut session = Self::with_base(id, base_image);
        for step in steps {
            session.commit_step(step)?;
        }
        session.revert(cursor)?;
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn base_image(&self) -> &Arc<ImageBuffer> {
        &self.base_image
    }

    pub fn steps(&self) -> &[EditStep] {
        &self.steps
    }

    pub fn cursor(&self) -> isize {
        self.cursor
    }

    pub fn step(&self, index: usize) -> Option<&EditStep> {
        self.steps.get(index)
    }

    pub fn active_image(&self) -> &Arc<ImageBuffer> {
        match usize::try_from(self.cursor) {
            Ok(i) => &self.steps[i].result,
            Err(_) => &self.base_image,
        }
    }

    /// Appends `step` after the cursor, discarding any steps beyond it.
    ///
    /// The step's `index` is rewritten to its position in the history.
    pub fn commit_step(&mut self, mut step: EditStep) -> Result<usize, ModelError> {
        let active = self.active_image();
        if !active.same_dims(&step.inputs.original) || !active.same_dims(&step.result) {
            return Err(ModelError::DimensionMismatch {
                expected: active.dims(),
                actual: step.result.dims(),
            });
        }
        if !Arc::ptr_eq(active, &step.inputs.original) && **active != *step.inputs.original {
            return Err(ModelError::StaleInput);
        }
        let index = (self.cursor + 1) as usize;
        self.steps.truncate(index);
        step.index = index;
        // share the allocation so the chain is pointer-identical as well
        step.inputs.original = Arc::clone(self.active_image());
        self.steps.push(step);
        self.cursor = index as isize;
        Ok(index)
    }

    /// Moves the cursor; nothing is discarded until the next commit.
    pub fn revert(&mut self, to_step: isize) -> Result<(), ModelError> {
        if to_step < -1 || to_step >= self.steps.len() as isize {
            return Err(ModelError::StepOutOfRange {
                requested: to_step,
                count: self.steps.len(),
            });
        }
        self.cursor = to_step;
        Ok(())
    }
}
