//! Dataset ingestion, preprocessing, synthetic-scene generation and
//! cross-validation fold construction.
//!
//! Images enter through a neutral manifest (CSV or JSON-lines, one row per
//! image) pointing at 16-bit PNG or CHYP raw-float payloads. Ground-truth
//! illuminants are normalized on ingest.

mod chyp;
mod folds;
mod preprocess;
mod synth;

pub use chyp::{read_chyp, write_chyp, CHYP_MAGIC};
pub use folds::{make_folds, FoldSpec};
pub use preprocess::{
    corrected_thumbnail, finish_thumbnail, preprocess, resize_area_average, resize_stage,
    Thumbnail, LOG_EPSILON, SATURATION_CLIP, THUMB_SIZE,
};
pub use synth::{synth_scene, synth_scene_balanced, SynthCamera};

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::color::{LinearImage, UnitRgb};
use crate::error::{Error, Result};

/// One training or evaluation image with its ground truth and grouping keys.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    /// Identifier used in reports; the manifest `path` field.
    pub id: String,
    pub image: LinearImage,
    pub truth: UnitRgb,
    pub camera_id: String,
    /// Scene grouping key for fold construction; never empty.
    pub scene_id: String,
    /// Per-channel raw sensor offset.
    pub black_level: [f64; 3],
    /// Raw full-scale value.
    pub saturation_level: f64,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    path: String,
    camera_id: String,
    scene_id: String,
    gt_r: f64,
    gt_g: f64,
    gt_b: f64,
    black_level: f64,
    saturation_level: f64,
    #[serde(default)]
    mask_path: Option<String>,
}

fn parse_rows(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    );
    if is_jsonl {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: ManifestRow = serde_json::from_str(line).map_err(|e| Error::ParseError {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok(rows)
    } else {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, record) in reader.deserialize::<ManifestRow>().enumerate() {
            rows.push(record.map_err(|e| Error::ParseError {
                path: path.to_path_buf(),
                line: i + 2, // header occupies line 1
                msg: e.to_string(),
            })?);
        }
        Ok(rows)
    }
}

fn load_pixels(path: &Path) -> Result<ndarray::Array3<f64>> {
    if !path.exists() {
        return Err(Error::MissingImageFile(path.to_path_buf()));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("chyp") => read_chyp(path),
        _ => {
            let img = image::open(path).map_err(|e| Error::BadImageFile {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
            let rgb = img.to_rgb16();
            let (w, h) = rgb.dimensions();
            let mut pixels = ndarray::Array3::zeros((h as usize, w as usize, 3));
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    pixels[(y as usize, x as usize, c)] = p.0[c] as f64;
                }
            }
            Ok(pixels)
        }
    }
}

fn load_mask(path: &Path, h: usize, w: usize) -> Result<ndarray::Array2<bool>> {
    if !path.exists() {
        return Err(Error::MissingImageFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::BadImageFile {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let gray = img.to_luma16();
    let (mw, mh) = gray.dimensions();
    if mh as usize != h || mw as usize != w {
        return Err(Error::MaskShapeMismatch { mask_h: mh as usize, mask_w: mw as usize, h, w });
    }
    let mut mask = ndarray::Array2::from_elem((h, w), false);
    for (x, y, p) in gray.enumerate_pixels() {
        mask[(y as usize, x as usize)] = p.0[0] > 0;
    }
    Ok(mask)
}

/// Loads every row of a manifest into memory. Relative payload paths are
/// resolved against the manifest's directory. Ground-truth triples are
/// unit-normalized on ingest; zero or negative triples are rejected.
pub fn load_manifest(path: &Path) -> Result<Vec<LabeledImage>> {
    let rows = parse_rows(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        if row.scene_id.is_empty() {
            return Err(Error::ParseError {
                path: path.to_path_buf(),
                line,
                msg: "scene_id must be non-empty".into(),
            });
        }
        let norm =
            (row.gt_r * row.gt_r + row.gt_g * row.gt_g + row.gt_b * row.gt_b).sqrt();
        let truth = UnitRgb::normalized(row.gt_r, row.gt_g, row.gt_b).map_err(|e| {
            Error::BadIlluminant { path: path.to_path_buf(), line, msg: e.to_string() }
        })?;
        if (norm - 1.0).abs() > 0.0 && (norm - 1.0).abs() < 1e-3 {
            eprintln!(
                "warning: {}:{line}: ground truth norm {norm:.6} is slightly off unit; re-normalized",
                path.display()
            );
        }
        let img_path = resolve(base, &row.path);
        let pixels = load_pixels(&img_path)?;
        let (h, w, _) = pixels.dim();
        let mask = match &row.mask_path {
            Some(mp) => Some(load_mask(&resolve(base, mp), h, w)?),
            None => None,
        };
        out.push(LabeledImage {
            id: row.path.clone(),
            image: LinearImage::new(pixels, mask)?,
            truth,
            camera_id: row.camera_id.clone(),
            scene_id: row.scene_id.clone(),
            black_level: [row.black_level; 3],
            saturation_level: row.saturation_level,
        });
    }
    Ok(out)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let candidate = Path::new(p);
    if candidate.is_absolute() {
        candidate.to_path_buf()
    } else {
        base.join(candidate)
    }
}

/// Groups images by camera id, preserving input order within each camera.
pub fn group_by_camera(images: Vec<LabeledImage>) -> std::collections::BTreeMap<String, Vec<LabeledImage>> {
    let mut map: std::collections::BTreeMap<String, Vec<LabeledImage>> = Default::default();
    for img in images {
        map.entry(img.camera_id.clone()).or_default().push(img);
    }
    map
}
