//! Object-property measurement, percentage errors and CLIP-style direction
//! metrics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{cosine, BackendError, Embedder};
use crate::imageops::{self, rgb_to_hsv_hue, ImageOpsError};
use crate::mask::tight_bbox;
use crate::model::{BinaryMask, ImageBuffer};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("segmentation mask is empty")]
    EmptyMask,
    #[error("mask is {mask:?} but the image is {image:?}")]
    DimensionMismatch { mask: (u32, u32), image: (u32, u32) },
    #[error("specified {0} is zero; cannot compute a percentage error")]
    ZeroDenominator(&'static str),
    #[error("embedding dims differ: {0} vs {1}")]
    EmbeddingDims(usize, usize),
    #[error("undefined direction: {0} embeddings do not differ")]
    UndefinedDirection(&'static str),
    #[error("embedder failed: {0}")]
    Backend(#[from] BackendError),
    #[error("no cases found in {0}")]
    NoCases(PathBuf),
    #[error("malformed case: {0}")]
    MalformedCase(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Codec(#[from] ImageOpsError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Measured properties of a segmented object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectProperties {
    pub width: f64,
    pub height: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Degrees in (−180, 180], +x right, +y up.
    pub rotation: f64,
    pub rotation_degenerate: bool,
    /// HSV hue in [0, 1).
    pub hue: f64,
    pub hue_degenerate: bool,
    pub aspect_ratio: f64,
}

/// User-specified target values; unspecified fields are not scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropertySpec {
    pub width: Option<f64>,
    pub height: Option<f64>,
    pub center_x: Option<f64>,
    pub center_y: Option<f64>,
    pub rotation: Option<f64>,
    pub hue: Option<f64>,
    pub aspect_ratio: Option<f64>,
}

impl From<&ObjectProperties> for PropertySpec {
    fn from(p: &ObjectProperties) -> Self {
        Self {
            width: Some(p.width),
            height: Some(p.height),
            center_x: Some(p.center_x),
            center_y: Some(p.center_y),
            rotation: Some(p.rotation),
            hue: Some(p.hue),
            aspect_ratio: Some(p.aspect_ratio),
        }
    }
}

/// Signed percentage errors; `None` where the spec leaves a field open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyErrors {
    pub pct_width: Option<f64>,
    pub pct_height: Option<f64>,
    pub pct_x: Option<f64>,
    pub pct_y: Option<f64>,
    pub pct_rotation: Option<f64>,
    pub pct_color: Option<f64>,
    pub pct_aspect: Option<f64>,
}

pub fn measure_object(seg: &BinaryMask, image: &ImageBuffer) -> Result<ObjectProperties, MetricsError> {
    if seg.dims() != image.dims() {
        return Err(MetricsError::DimensionMismatch {
            mask: seg.dims(),
            image: image.dims(),
        });
    }
    let bbox = tight_bbox(seg).map_err(|_| MetricsError::EmptyMask)?;
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
    let mut rgb = [0.0f64; 3];
    let colors = image.channels().color_count();
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            if !seg.get(x, y) {
                continue;
            }
            n += 1;
            sx += f64::from(x) + 0.5;
            sy += f64::from(y) + 0.5;
            let p = image.pixel(x, y);
            for (c, acc) in rgb.iter_mut().enumerate() {
                *acc += f64::from(p[if colors == 1 { 0 } else { c }]);
            }
        }
    }
    let n_f = n as f64;
    let (mx, my) = (sx / n_f, sy / n_f);
    let center_x = f64::from(bbox.x0 + bbox.x1) / 2.0;
    let center_y = f64::from(bbox.y0 + bbox.y1) / 2.0;
    // centroid -> bbox centre, with the row axis flipped to point up
    let vx = center_x - mx;
    let vy = my - center_y;
    let rotation_degenerate = vx.hypot(vy) < 1e-9;
    let rotation = if rotation_degenerate {
        0.0
    } else {
        wrap_degrees(vy.atan2(vx).to_degrees())
    };
    let hue = rgb_to_hsv_hue(rgb[0] / n_f / 255.0, rgb[1] / n_f / 255.0, rgb[2] / n_f / 255.0);
    let width = f64::from(bbox.width());
    let height = f64::from(bbox.height());
    Ok(ObjectProperties {
        width,
        height,
        center_x,
        center_y,
        rotation,
        rotation_degenerate,
        hue: hue.value,
        hue_degenerate: hue.degenerate,
        aspect_ratio: width / height,
    })
}

/// Wraps an angle in degrees into (−180, 180].
pub fn wrap_degrees(d: f64) -> f64 {
    let r = d.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Wraps a hue difference into (−0.5, 0.5].
pub fn wrap_hue(h: f64) -> f64 {
    let r = h.rem_euclid(1.0);
    if r > 0.5 {
        r - 1.0
    } else {
        r
    }
}

fn relative(field: &'static str, measured: f64, spec: Option<f64>) -> Result<Option<f64>, MetricsError> {
    match spec {
        None => Ok(None),
        Some(s) if s == 0.0 => Err(MetricsError::ZeroDenominator(field)),
        Some(s) => Ok(Some((measured - s) / s * 100.0)),
    }
}

pub fn percentage_errors(
    measured: &ObjectProperties,
    spec: &PropertySpec,
) -> Result<PropertyErrors, MetricsError> {
    Ok(PropertyErrors {
        pct_width: relative("width", measured.width, spec.width)?,
        pct_height: relative("height", measured.height, spec.height)?,
        pct_x: relative("center_x", measured.center_x, spec.center_x)?,
        pct_y: relative("center_y", measured.center_y, spec.center_y)?,
        pct_rotation: spec
            .rotation
            .map(|r| wrap_degrees(measured.rotation - r) / 360.0 * 100.0),
        pct_color: spec.hue.map(|h| wrap_hue(measured.hue - h) * 100.0),
        pct_aspect: relative("aspect_ratio", measured.aspect_ratio, spec.aspect_ratio)?,
    })
}

fn difference(a: &[f64], b: &[f64], what: &'static str) -> Result<Vec<f64>, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::EmbeddingDims(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-9 {
        return Err(MetricsError::UndefinedDirection(what));
    }
    Ok(d)
}

/// Cosine between the caption direction and the image direction.
pub fn clip_dir_from_vectors(
    src_text: &[f64],
    tgt_text: &[f64],
    src_img: &[f64],
    edit_img: &[f64],
) -> Result<f64, MetricsError> {
    let text_dir = difference(tgt_text, src_text, "caption")?;
    let image_dir = difference(edit_img, src_img, "image")?;
    if text_dir.len() != image_dir.len() {
        return Err(MetricsError::EmbeddingDims(text_dir.len(), image_dir.len()));
    }
    Ok(cosine(&text_dir, &image_dir))
}

pub fn clip_dir(
    src_img: &ImageBuffer,
    edit_img: &ImageBuffer,
    src_caption: &str,
    tgt_caption: &str,
    embedder: &dyn Embedder,
) -> Result<f64, MetricsError> {
    let st = embedder.embed_text(src_caption)?;
    let tt = embedder.embed_text(tgt_caption)?;
    let si = embedder.embed_image(src_img)?;
    let ei = embedder.embed_image(edit_img)?;
    clip_dir_from_vectors(st.values(), tt.values(), si.values(), ei.values())
}

pub fn clip_out(edit_img: &ImageBuffer, tgt_caption: &str, embedder: &dyn Embedder) -> Result<f64, MetricsError> {
    let ei = embedder.embed_image(edit_img)?;
    let tt = embedder.embed_text(tgt_caption)?;
    if ei.dim() != tt.dim() {
        return Err(MetricsError::EmbeddingDims(ei.dim(), tt.dim()));
    }
    Ok(cosine(ei.values(), tt.values()))
}

/// Mean and sample standard deviation (n − 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// Set when n = 1 and `sd` is reported as 0 by convention.
    pub single_sample: bool,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: None,
                sd: None,
                single_sample: false,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            n,
            mean: Some(mean),
            sd: Some(sd),
            single_sample: n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub name: String,
    pub clip_dir: Option<f64>,
    pub clip_out: Option<f64>,
    /// Set when the direction was undefined (no change in one modality).
    pub dir_undefined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub cases: Vec<CaseRow>,
    pub clip_dir: Aggregate,
    pub clip_out: Aggregate,
    pub undefined: usize,
    pub errored: usize,
}

impl ClipReport {
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "clip_dir", "clip_out", "dir_undefined", "error"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.cases {
            w.write_record([
                row.name.clone(),
                fmt(row.clip_dir),
                fmt(row.clip_out),
                row.dir_undefined.to_string(),
                row.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| MetricsError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }
}

pub const CASE_FILES: [&str; 4] = [
    "source.png",
    "edited.png",
    "source_caption.txt",
    "target_caption.txt",
];

struct Case {
    source: ImageBuffer,
    edited: ImageBuffer,
    source_caption: String,
    target_caption: String,
}

fn load_case(dir: &Path) -> Result<Case, MetricsError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                MetricsError::MalformedCase(format!("missing {name}"))
            } else {
                MetricsError::Io { path: p, source: e }
            }
        })
    };
    let text = |name: &str| -> Result<String, MetricsError> {
        let bytes = read(name)?;
        String::from_utf8(bytes)
            .map(|s| s.trim().to_string())
            .map_err(|_| MetricsError::MalformedCase(format!("{name} is not UTF-8")))
    };
    Ok(Case {
        source: imageops::decode_png(&read("source.png")?)?,
        edited: imageops::decode_png(&read("edited.png")?)?,
        source_caption: text("source_caption.txt")?,
        target_caption: text("target_caption.txt")?,
    })
}

/// Scores every case sub-directory of `case_dir`, ordered by name.
///
/// Malformed cases are reported per row; embedder failures abort the run.
pub fn evaluate_cases(case_dir: &Path, embedder: &dyn Embedder) -> Result<ClipReport, MetricsError> {
    let entries = fs::read_dir(case_dir).map_err(|e| MetricsError::Io {
        path: case_dir.to_path_buf(),
        source: e,
    })?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| MetricsError::Io {
            path: case_dir.to_path_buf(),
            source: e,
        })?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    if dirs.is_empty() {
        return Err(MetricsError::NoCases(case_dir.to_path_buf()));
    }
    dirs.sort();

    let mut cases = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let case = match load_case(&dir) {
            Ok(c) => c,
            Err(e) => {
                cases.push(CaseRow {
                    name,
                    clip_dir: None,
                    clip_out: None,
                    dir_undefined: false,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut row = CaseRow {
            name,
            clip_dir: None,
            clip_out: None,
            dir_undefined: false,
            error: None,
        };
        match clip_dir(&case.source, &case.edited, &case.source_caption, &case.target_caption, embedder) {
            Ok(v) => row.clip_dir = Some(v),
            Err(MetricsError::UndefinedDirection(_)) => row.dir_undefined = true,
            Err(MetricsError::Backend(e)) if !matches!(e, BackendError::EmptyInput) => {
                return Err(MetricsError::Backend(e))
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        match clip_out(&case.edited, &case.target_caption, embedder) {
            Ok(v) => row.clip_out = Some(v),
            Err(MetricsError::Backend(e)) if !matches!(e, BackendError::EmptyInput) => {
                return Err(MetricsError::Backend(e))
            }
            Err(e) => {
                row.error.get_or_insert(e.to_string());
            }
        }
        cases.push(row);
    }
    let dirs_ok: Vec<f64> = cases.iter().filter_map(|c| c.clip_dir).collect();
    let outs: Vec<f64> = cases.iter().filter_map(|c| c.clip_out).collect();
    Ok(ClipReport {
        clip_dir: Aggregate::of(&dirs_ok),
        clip_out: Aggregate::of(&outs),
        undefined: cases.iter().filter(|c| c.dir_undefined).count(),
        errored: cases.iter().filter(|c| c.error.is_some()).count(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockEmbedder;
    use crate::model::Channels;
    use proptest::prelude::*;

    fn disk(cx: f64, cy: f64, r: f64, keep: impl Fn(f64, f64) -> bool) -> BinaryMask {
        BinaryMask::from_fn(200, 200, |x, y| {
            let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            (px - cx).powi(2) + (py - cy).powi(2) <= r * r && keep(px, py)
        })
        .unwrap()
    }

    fn red() -> ImageBuffer {
        ImageBuffer::filled(200, 200, &[255, 0, 0]).unwrap()
    }

    #[test]
    fn centred_disk() {
        let p = measure_object(&disk(100.0, 100.0, 20.0, |_, _| true), &red()).unwrap();
        assert!((p.width - 40.0).abs() <= 1.0 && (p.height - 40.0).abs() <= 1.0);
        assert!((p.center_x - 100.0).abs() <= 0.5 && (p.center_y - 100.0).abs() <= 0.5);
        assert_eq!(p.hue, 0.0);
        assert!((p.aspect_ratio - 1.0).abs() <= 0.05);
        assert!(p.rotation_degenerate);
        assert_eq!(p.rotation, 0.0);
    }

    #[test]
    fn upper_half_disk_points_up() {
        let m = disk(100.0, 100.0, 20.0, |_, py| py < 100.0);
        let p = measure_object(&m, &red()).unwrap();
        // brute-force centroid over the enumerated pixels
        let (mut sy, mut n) = (0.0, 0.0);
        for y in 0..200 {
            for x in 0..200 {
                if m.get(x, y) {
                    sy += f64::from(y) + 0.5;
                    n += 1.0;
                }
            }
        }
        assert!(sy / n > p.center_y, "centroid lies below the box centre on screen");
        assert!((p.rotation - 90.0).abs() <= 2.0, "{}", p.rotation);
        let lower = measure_object(&disk(100.0, 100.0, 20.0, |_, py| py > 100.0), &red()).unwrap();
        assert!((lower.rotation + 90.0).abs() <= 2.0);
        let left = measure_object(&disk(100.0, 100.0, 20.0, |px, _| px < 100.0), &red()).unwrap();
        assert!((left.rotation.abs() - 180.0).abs() <= 2.0);
        let right = measure_object(&disk(100.0, 100.0, 20.0, |px, _| px > 100.0), &red()).unwrap();
        assert!(right.rotation.abs() <= 2.0);
    }

    #[test]
    fn two_pixel_mask() {
        let mut m = BinaryMask::empty(20, 5).unwrap();
        m.set(0, 0, true);
        m.set(9, 0, true);
        let img = ImageBuffer::filled(20, 5, &[0, 0, 255]).unwrap();
        let p = measure_object(&m, &img).unwrap();
        assert_eq!((p.width, p.height), (10.0, 1.0));
        assert_eq!((p.center_x, p.center_y), (5.0, 0.5));
        assert_eq!(p.aspect_ratio, 10.0);
        assert!((p.hue - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn measure_errors() {
        let img = red();
        assert!(matches!(
            measure_object(&BinaryMask::empty(200, 200).unwrap(), &img),
            Err(MetricsError::EmptyMask)
        ));
        assert!(matches!(
            measure_object(&BinaryMask::full(10, 10).unwrap(), &img),
            Err(MetricsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn height_ten_percent_larger() {
        let mut p = measure_object(&disk(100.0, 100.0, 20.0, |_, _| true), &red()).unwrap();
        p.height = 110.0;
        let e = percentage_errors(&p, &PropertySpec { height: Some(100.0), ..Default::default() }).unwrap();
        assert_eq!(e.pct_height, Some(10.0));
        assert_eq!(e.pct_width, None);
    }

    #[test]
    fn rotation_wraps() {
        let mut p = measure_object(&disk(100.0, 100.0, 20.0, |_, _| true), &red()).unwrap();
        p.rotation = 350.0;
        let e = percentage_errors(&p, &PropertySpec { rotation: Some(10.0), ..Default::default() }).unwrap();
        assert!((e.pct_rotation.unwrap() - (-20.0 / 360.0 * 100.0)).abs() < 1e-12);
        // brute-force wrap: choose the representative of d + 360k in (−180, 180]
        for d in -1080..=1080 {
            let d = f64::from(d) + 0.25;
            let mut best = d;
            for k in -4..=4 {
                let c = d + 360.0 * f64::from(k);
                if c > -180.0 && c <= 180.0 {
                    best = c;
                }
            }
            assert!((wrap_degrees(d) - best).abs() < 1e-9, "{d}");
        }
        assert_eq!(wrap_degrees(-180.0), 180.0);
    }

    #[test]
    fn hue_wraps() {
        let mut p = measure_object(&disk(100.0, 100.0, 20.0, |_, _| true), &red()).unwrap();
        p.hue = 0.99;
        let e = percentage_errors(&p, &PropertySpec { hue: Some(0.01), ..Default::default() }).unwrap();
        assert!((e.pct_color.unwrap() + 2.0).abs() < 1e-9);
        assert_eq!(wrap_hue(-0.5), 0.5);
    }

    #[test]
    fn zero_denominator() {
        let p = measure_object(&disk(100.0, 100.0, 20.0, |_, _| true), &red()).unwrap();
        assert!(matches!(
            percentage_errors(&p, &PropertySpec { width: Some(0.0), ..Default::default() }),
            Err(MetricsError::ZeroDenominator("width"))
        ));
    }

    #[test]
    fn clip_hand_vectors() {
        let e = |i: usize| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        let zero = vec![0.0; 4];
        assert_eq!(clip_dir_from_vectors(&zero, &e(0), &zero, &e(0)).unwrap(), 1.0);
        assert_eq!(clip_dir_from_vectors(&zero, &e(0), &zero, &e(1)).unwrap(), 0.0);
        assert!(matches!(
            clip_dir_from_vectors(&zero, &e(0), &e(2), &e(2)),
            Err(MetricsError::UndefinedDirection("image"))
        ));
    }

    #[test]
    fn identical_edit_is_undefined() {
        let img = ImageBuffer::filled(4, 4, &[1, 2, 3]).unwrap();
        let err = clip_dir(&img, &img, "a", "b", &MockEmbedder).unwrap_err();
        assert!(matches!(err, MetricsError::UndefinedDirection(_)));
    }

    #[test]
    fn clip_out_same_hash_is_one() {
        // text and image hashed to the same 8-byte prefix get the same vector
        let img = ImageBuffer::filled(2, 2, &[9, 9, 9]).unwrap();
        let v = MockEmbedder.embed_image(&img).unwrap();
        assert!((cosine(v.values(), v.values()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_closed_forms() {
        let a = Aggregate::of(&[0.2, 0.5]);
        assert_eq!(a.mean, Some((0.2 + 0.5) / 2.0));
        assert!((a.sd.unwrap() - (0.5f64 - 0.2).abs() / 2f64.sqrt()).abs() < 1e-15);
        let one = Aggregate::of(&[0.3]);
        assert_eq!((one.sd, one.single_sample), (Some(0.0), true));
        assert_eq!(Aggregate::of(&[]).mean, None);
    }

    fn write_case(root: &Path, name: &str, src: &ImageBuffer, edit: &ImageBuffer, sc: &str, tc: Option<&str>) {
        let d = root.join(name);
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("source.png"), imageops::encode_png(src).unwrap()).unwrap();
        fs::write(d.join("edited.png"), imageops::encode_png(edit).unwrap()).unwrap();
        fs::write(d.join("source_caption.txt"), sc).unwrap();
        if let Some(tc) = tc {
            fs::write(d.join("target_caption.txt"), tc).unwrap();
        }
    }

    #[test]
    fn evaluate_cases_reports_rows() {
        let dir = tempfile::tempdir().unwrap();
        let a = ImageBuffer::filled(8, 8, &[10, 20, 30]).unwrap();
        let b = ImageBuffer::filled(8, 8, &[200, 20, 30]).unwrap();
        write_case(dir.path(), "b_case", &a, &b, "a photo", Some("a red photo"));
        write_case(dir.path(), "a_case", &a, &a, "x", Some("y"));
        write_case(dir.path(), "c_case", &a, &b, "x", None);
        let r = evaluate_cases(dir.path(), &MockEmbedder).unwrap();
        let names: Vec<_> = r.cases.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["a_case", "b_case", "c_case"]);
        assert!(r.cases[0].dir_undefined);
        assert!(r.cases[2].error.as_ref().unwrap().contains("target_caption.txt"));
        assert_eq!((r.undefined, r.errored), (1, 1));
        assert_eq!(r.clip_dir.n, 1);
        assert_eq!(r.clip_out.n, 2);
        let csv_path = dir.path().join("r.csv");
        r.write_csv(&csv_path).unwrap();
        assert_eq!(fs::read_to_string(csv_path).unwrap().lines().count(), 4);
    }

    #[test]
    fn empty_case_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(evaluate_cases(dir.path(), &MockEmbedder), Err(MetricsError::NoCases(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn translation_shifts_center_only(dx in 0u32..60, dy in 0u32..60, w in 3u32..30, h in 3u32..30) {
            let img = ImageBuffer::from_fn(120, 120, Channels::Rgb, |_, _, c| [30, 140, 200][c]).unwrap();
            let base = BinaryMask::from_fn(120, 120, |x, y| x >= 5 && x < 5 + w && y >= 7 && y < 7 + h && (x + y) % 3 != 0).unwrap();
            let moved = BinaryMask::from_fn(120, 120, |x, y| x >= dx && y >= dy && base.get(x - dx, y - dy)).unwrap();
            let a = measure_object(&base, &img).unwrap();
            let b = measure_object(&moved, &img).unwrap();
            prop_assert_eq!(b.center_x - a.center_x, f64::from(dx));
            prop_assert_eq!(b.center_y - a.center_y, f64::from(dy));
            prop_assert_eq!((a.width, a.height, a.aspect_ratio, a.hue), (b.width, b.height, b.aspect_ratio, b.hue));
        }

        #[test]
        fn self_errors_are_zero(w in 1.0f64..500.0, rot in -179.0f64..180.0, hue in 0.0f64..1.0) {
            let p = ObjectProperties { width: w, height: w / 2.0, center_x: w, center_y: 3.0, rotation: rot, rotation_degenerate: false, hue, hue_degenerate: false, aspect_ratio: 2.0 };
            let e = percentage_errors(&p, &PropertySpec::from(&p)).unwrap();
            for v in [e.pct_width, e.pct_height, e.pct_x, e.pct_y, e.pct_rotation, e.pct_color, e.pct_aspect] {
                prop_assert_eq!(v, Some(0.0));
            }
        }

        #[test]
        fn rotation_error_invariant_to_full_turns(m in -720.0f64..720.0, s in -720.0f64..720.0) {
            let p = ObjectProperties { width: 1.0, height: 1.0, center_x: 1.0, center_y: 1.0, rotation: m, rotation_degenerate: false, hue: 0.0, hue_degenerate: false, aspect_ratio: 1.0 };
            let a = percentage_errors(&p, &PropertySpec { rotation: Some(s), ..Default::default() }).unwrap().pct_rotation.unwrap();
            let b = percentage_errors(&p, &PropertySpec { rotation: Some(s + 360.0), ..Default::default() }).unwrap().pct_rotation.unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn cosine_scale_invariant(seed in any::<u64>(), k in 0.01f64..100.0) {
            let v = |salt: u64| MockEmbedder::from_hash(seed ^ salt).values().to_vec();
            let (a, b, c, d) = (v(1), v(2), v(3), v(4));
            let base = clip_dir_from_vectors(&a, &b, &c, &d).unwrap();
            let s = |x: &[f64]| x.iter().map(|t| t * k).collect::<Vec<_>>();
            let scaled = clip_dir_from_vectors(&s(&a), &s(&b), &s(&c), &s(&d)).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }
}
