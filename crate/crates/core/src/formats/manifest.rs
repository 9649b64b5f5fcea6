//! Dataset directory: one graymap per sample plus `manifest.jsonl`, one
//! JSON record per line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{read_pgm, write_pgm};
use super::write_atomic;
use crate::error::{GemError, Result};
use crate::pipeline::{fit_points, Blob, Sample, SampleMeta, Split};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Path relative to the dataset directory.
    pub image: String,
    pub tokens: Vec<usize>,
    pub gaze: Vec<[f64; 2]>,
    pub class: usize,
    pub split: Split,
}

fn line_err(line: usize, msg: impl std::fmt::Display) -> GemError {
    GemError::Format(format!("{MANIFEST_FILE} line {line}: {msg}"))
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| line_err(i + 1, e))?;
        if rec.gaze.is_empty() {
            return Err(line_err(i + 1, "field 'gaze' is empty"));
        }
        if let Some(p) = rec.gaze.iter().find(|p| !p.iter().all(|c| (0.0..=1.0).contains(c))) {
            return Err(line_err(i + 1, format!("field 'gaze' has point {p:?} outside [0, 1]²")));
        }
        if rec.image.is_empty() || Path::new(&rec.image).is_absolute() {
            return Err(line_err(i + 1, "field 'image' must be a relative path"));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Image file name for sample `index` of `split`.
pub fn image_name(split: Split, index: usize) -> String {
    format!("{}/{index:06}.pgm", split.name())
}

/// Writes images and the manifest for the given splits, in split order.
/// The manifest is written last, so a dataset without one is incomplete.
pub fn write_dataset(dir: &Path, splits: &[(Split, Vec<Sample>)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (split, samples) in splits {
        std::fs::create_dir_all(dir.join(split.name()))?;
        for (i, s) in samples.iter().enumerate() {
            let name = image_name(*split, i);
            write_pgm(&dir.join(&name), s.size, s.size, &s.image)?;
            let gaze = s
                .gaze
                .iter()
                .zip(&s.valid)
                .filter(|(_, &v)| v)
                .map(|(p, _)| *p)
                .collect();
            let rec = ManifestRecord {
                image: name,
                tokens: s.tokens.clone(),
                gaze,
                class: s.meta.target.class,
                split: *split,
            };
            writeln!(manifest, "{}", serde_json::to_string(&rec)?).expect("writing to a String");
        }
    }
    write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())
}

/// Loaded samples of one split, checked against the expected image side,
/// point count and token count.
pub fn load_split(dir: &Path, split: Split, size: usize, points: usize, tokens: usize) -> Result<Vec<Sample>> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| GemError::Format(format!("{}: {e}", path.display())))?;
    let records = parse_manifest(&text)?;
    let mut out = Vec::new();
    for (line, rec) in records.iter().enumerate().filter(|(_, r)| r.split == split) {
        let img_path: PathBuf = dir.join(&rec.image);
        let (w, h, image) = read_pgm(&img_path)?;
        if w != size || h != size {
            return Err(GemError::Format(format!(
                "{}: image is {w}×{h}, configured size is {size}×{size}",
                img_path.display()
            )));
        }
        let (gaze, valid) = fit_points(&rec.gaze, points)?;
        let sample = Sample {
            image,
            size,
            tokens: rec.tokens.clone(),
            gaze,
            valid,
            meta: SampleMeta {
                target: Blob {
                    class: rec.class,
                    center: rec.gaze[0],
                },
                distractor: None,
            },
        };
        sample
            .validate(size, points, tokens)
            .map_err(|e| line_err(line + 1, e))?;
        out.push(sample);
    }
    Ok(out)
}
