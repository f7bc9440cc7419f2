//! On-disk project layout: `<dir>/manifest.json`, `<dir>/base.png` and one
//! directory of PNG layers per step.
//!
//! Every file is written to a temporary sibling and renamed into place; the
//! manifest goes last, so a crash leaves the previous manifest intact.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    BinaryMask, BoundingBox, EditConfig, EditSession, EditStep, ImageBuffer, ModelError,
    Provenance, StepInputs,
};
use crate::imageops::{decode_png, encode_png, ImageOpsError};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const BASE_FILE: &str = "base.png";
const STEPS_DIR: &str = "steps";

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("project manifest missing: {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported manifest schema_version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("referenced layer file missing: {0}")]
    MissingFile(PathBuf),
    #[error("cannot decode {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: ImageOpsError,
    },
    #[error("inconsistent project: {0}")]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    #[serde(default)]
    id: String,
    base_image: String,
    #[serde(default)]
    base_sha256: String,
    #[serde(default = "default_cursor")]
    cursor: isize,
    steps: Vec<StepRecord>,
}

fn default_cursor() -> isize {
    -1
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRecord {
    index: usize,
    config: EditConfig,
    region: BoundingBox,
    files: StepFiles,
    #[serde(default)]
    sha256: Option<StepFiles>,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StepFiles {
    mask: String,
    hint: String,
    result: String,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ProjectError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn encode(image: &ImageBuffer, path: &Path) -> Result<Vec<u8>, ProjectError> {
    encode_png(image).map_err(|source| ProjectError::Codec {
        path: path.to_path_buf(),
        source,
    })
}

fn read_manifest(dir: &Path) -> Result<Manifest, ProjectError> {
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ProjectError::MissingManifest(path))
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| ProjectError::Manifest {
            path: path.clone(),
            source,
        })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(ProjectError::SchemaVersion {
            found: manifest.schema_version,
        });
    }
    Ok(manifest)
}

/// Writes `image` unless the previous manifest already recorded the same digest
/// for the same path and the file is still there.
fn write_layer(
    dir: &Path,
    rel: &str,
    image: &ImageBuffer,
    digest: &str,
    previous: Option<&str>,
) -> Result<(), ProjectError> {
    let path = dir.join(rel);
    if previous == Some(digest) && path.is_file() {
        return Ok(());
    }
    let bytes = encode(image, &path)?;
    write_atomic(&path, &bytes)
}

pub fn save_project(session: &EditSession, dir: &Path) -> Result<(), ProjectError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let previous = read_manifest(dir).ok();
    let prev_step = |i: usize| -> Option<(&StepFiles, &StepFiles)> {
        let rec = previous.as_ref()?.steps.get(i)?;
        Some((&rec.files, rec.sha256.as_ref()?))
    };

    let base_sha = session.base_image().digest_hex();
    let prev_base = previous
        .as_ref()
        .filter(|m| m.base_image == BASE_FILE)
        .map(|m| m.base_sha256.as_str());
    write_layer(dir, BASE_FILE, session.base_image(), &base_sha, prev_base)?;

    let mut records = Vec::with_capacity(session.steps().len());
    for step in session.steps() {
        let stem = format!("{STEPS_DIR}/{:04}", step.index);
        let files = StepFiles {
            mask: format!("{stem}/mask.png"),
            hint: format!("{stem}/hint.png"),
            result: format!("{stem}/result.png"),
        };
        let mask_gray = step.inputs.context_mask.to_gray();
        let sha = StepFiles {
            mask: mask_gray.digest_hex(),
            hint: step.inputs.hinted.digest_hex(),
            result: step.result.digest_hex(),
        };
        let prev = prev_step(step.index).filter(|(f, _)| **f == files);
        let prev_sha = |pick: fn(&StepFiles) -> &String| prev.map(|(_, s)| pick(s).as_str());
        write_layer(dir, &files.mask, &mask_gray, &sha.mask, prev_sha(|s| &s.mask))?;
        write_layer(dir, &files.hint, &step.inputs.hinted, &sha.hint, prev_sha(|s| &s.hint))?;
        write_layer(dir, &files.result, &step.result, &sha.result, prev_sha(|s| &s.result))?;
        records.push(StepRecord {
            index: step.index,
            config: step.config.clone(),
            region: step.region,
            files,
            sha256: Some(sha),
            provenance: step.provenance.clone(),
        });
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        id: session.id().to_owned(),
        base_image: BASE_FILE.to_owned(),
        base_sha256: base_sha,
        cursor: session.cursor(),
        steps: records,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;

    // drop layer directories of steps that were truncated away
    let steps_dir = dir.join(STEPS_DIR);
    if let Ok(entries) = fs::read_dir(&steps_dir) {
        for entry in entries.flatten() {
            let stale = entry
                .file_name()
                .to_str()
                .and_then(|n| n.parse::<usize>().ok())
                .is_some_and(|i| i >= session.steps().len());
            if stale {
                let _ = fs::remove_dir_all(entry.path());
            }
        }
    }
    Ok(())
}

fn read_layer(dir: &Path, rel: &str) -> Result<ImageBuffer, ProjectError> {
    let path = dir.join(rel);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ProjectError::MissingFile(path))
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    decode_png(&bytes).map_err(|source| ProjectError::Codec { path, source })
}

pub fn load_project(dir: &Path) -> Result<EditSession, ProjectError> {
    let manifest = read_manifest(dir)?;
    let base = Arc::new(read_layer(dir, &manifest.base_image)?);
    let mut session = EditSession::with_base(manifest.id.clone(), base);
    for rec in manifest.steps {
        let mask_path = dir.join(&rec.files.mask);
        let mask_img = read_layer(dir, &rec.files.mask)?;
        let mask = BinaryMask::from_gray(&mask_img).map_err(|e| ProjectError::Codec {
            path: mask_path,
            source: e.into(),
        })?;
        let hinted = read_layer(dir, &rec.files.hint)?;
        let result = read_layer(dir, &rec.files.result)?;
        let step = EditStep {
            index: rec.index,
            inputs: StepInputs {
                original: Arc::clone(session.active_image()),
                context_mask: Arc::new(mask),
                hinted: Arc::new(hinted),
            },
            config: rec.config,
            region: rec.region,
            result: Arc::new(result),
            provenance: rec.provenance,
        };
        let committed = session.commit_step(step)?;
        if committed != rec.index {
            return Err(ModelError::StepOutOfRange {
                requested: rec.index as isize,
                count: committed,
            }
            .into());
        }
    }
    session.revert(manifest.cursor)?;
    Ok(session)
}
