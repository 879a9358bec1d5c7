use std::collections::HashMap;
use std::fs;
use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, Detection};
use crate::error::{Error, Result};
use crate::hash::ContentHash;

/// Object detector behind curation. Implementations declare how many images
/// they can process concurrently.
pub trait Detector: Send + Sync {
    fn detect(&self, content_hash: &ContentHash, image: &DynamicImage) -> Result<Vec<Detection>>;

    fn max_parallel(&self) -> usize {
        1
    }
}

/// Format tag carried by the optional first line of a detection sidecar.
pub const SIDECAR_FORMAT: &str = "fleet-census-detections";
pub const SIDECAR_VERSION: u32 = 1;

/// One detection line: `{content_hash, label, confidence, x, y, width, height}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarLine {
    pub content_hash: ContentHash,
    pub label: String,
    pub confidence: f64,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl SidecarLine {
    pub fn detection(&self) -> Detection {
        Detection {
            label: self.label.clone(),
            confidence: self.confidence,
            bbox: BoundingBox {
                x: self.x,
                y: self.y,
                width: self.width,
                height: self.height,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarHeader {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub detector: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyLine {
    Header(SidecarHeader),
    Detection(SidecarLine),
}

/// Detector that replays precomputed detections: either one consolidated
/// JSON-lines file, or a directory of per-image `<content_hash>.jsonl` files.
/// Images absent from the sidecar have no detections.
#[derive(Debug, Clone, Default)]
pub struct SidecarDetector {
    by_hash: HashMap<ContentHash, Vec<Detection>>,
    warnings: Vec<String>,
}

impl SidecarDetector {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut det = SidecarDetector::default();
        if path.is_dir() {
            let mut files: Vec<_> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|d| d.ok().map(|d| d.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
                .collect();
            files.sort();
            for f in files {
                det.read_file(&f)?;
            }
        } else {
            det.read_file(path)?;
        }
        Ok(det)
    }

    fn read_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            match serde_json::from_str::<AnyLine>(line).map_err(|e| parse_err(e.to_string()))? {
                AnyLine::Header(h) => {
                    if i != 0 && saw_header {
                        return Err(parse_err("repeated header".into()));
                    }
                    if h.format != SIDECAR_FORMAT || h.version != SIDECAR_VERSION {
                        return Err(parse_err(format!(
                            "unsupported sidecar {} v{}",
                            h.format, h.version
                        )));
                    }
                    saw_header = true;
                }
                AnyLine::Detection(d) => {
                    if !(0.0..=1.0).contains(&d.confidence) {
                        return Err(parse_err(format!("confidence {} outside [0,1]", d.confidence)));
                    }
                    if d.width == 0 || d.height == 0 {
                        return Err(parse_err("zero-sized box".into()));
                    }
                    if d.label.trim().is_empty() {
                        return Err(parse_err("empty label".into()));
                    }
                    self.by_hash.entry(d.content_hash).or_default().push(d.detection());
                }
            }
        }
        if !saw_header {
            self.warnings
                .push(format!("{}: no header line", path.display()));
        }
        Ok(())
    }

    pub fn insert(&mut self, hash: ContentHash, detections: Vec<Detection>) {
        self.by_hash.insert(hash, detections);
    }

    /// Non-fatal format findings from loading (e.g. a missing header).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn image_count(&self) -> usize {
        self.by_hash.len()
    }
}

impl Detector for SidecarDetector {
    fn detect(&self, content_hash: &ContentHash, _image: &DynamicImage) -> Result<Vec<Detection>> {
        Ok(self.by_hash.get(content_hash).cloned().unwrap_or_default())
    }

    fn max_parallel(&self) -> usize {
        usize::MAX
    }
}

/// Write a consolidated sidecar (header first, then lines in the given order).
pub fn write_sidecar(path: impl AsRef<Path>, detector_name: &str, lines: &[SidecarLine]) -> Result<()> {
    let header = SidecarHeader {
        format: SIDECAR_FORMAT.into(),
        version: SIDECAR_VERSION,
        detector: Some(detector_name.into()),
    };
    let mut buf = crate::jsonl::to_line(&header);
    for l in lines {
        buf.push_str(&crate::jsonl::to_line(l));
    }
    crate::jsonl::write_bytes_atomic(path, buf.as_bytes())
}

/// Run the detector and drop detections under the confidence floor.
pub fn detect(
    content_hash: &ContentHash,
    image: &DynamicImage,
    detector: &dyn Detector,
    confidence_floor: f64,
) -> Result<Vec<Detection>> {
    let found = detector.detect(content_hash, image)?;
    for d in &found {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::Invariant(format!(
                "detector returned confidence {} for {}",
                d.confidence,
                content_hash.short()
            )));
        }
    }
    Ok(found.into_iter().filter(|d| d.confidence >= confidence_floor).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> DynamicImage {
        DynamicImage::new_rgb8(100, 100)
    }

    fn line(hash: ContentHash, label: &str, confidence: f64) -> SidecarLine {
        SidecarLine { content_hash: hash, label: label.into(), confidence, x: 0, y: 0, width: 80, height: 60 }
    }

    #[test]
    fn echoes_sidecar_and_applies_floor() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("det.jsonl");
        let a = ContentHash::of(b"a");
        let b = ContentHash::of(b"b");
        write_sidecar(&p, "mock", &[line(a, "truck", 0.9), line(b, "car", 0.2)]).unwrap();
        let det = SidecarDetector::load(&p).unwrap();
        assert!(det.warnings().is_empty());

        let found = detect(&a, &img(), &det, 0.5).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].label, "truck");
        assert!(detect(&b, &img(), &det, 0.5).unwrap().is_empty());
        assert!(detect(&ContentHash::of(b"c"), &img(), &det, 0.5).unwrap().is_empty());
    }

    #[test]
    fn per_image_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let a = ContentHash::of(b"a");
        let lines = crate::jsonl::to_line(&line(a, "van", 0.8));
        fs::write(dir.path().join(format!("{a}.jsonl")), lines).unwrap();
        fs::write(dir.path().join(format!("{}.jsonl", ContentHash::of(b"z"))), "").unwrap();
        let det = SidecarDetector::load(dir.path()).unwrap();
        assert_eq!(det.detect(&a, &img()).unwrap().len(), 1);
        // headerless files load but are flagged
        assert_eq!(det.warnings().len(), 2);
    }

    #[test]
    fn bad_confidence_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("det.jsonl");
        fs::write(&p, crate::jsonl::to_line(&line(ContentHash::of(b"a"), "car", 1.5))).unwrap();
        assert!(matches!(SidecarDetector::load(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_sidecar_with_header_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("det.jsonl");
        write_sidecar(&p, "mock", &[]).unwrap();
        let det = SidecarDetector::load(&p).unwrap();
        assert_eq!(det.image_count(), 0);
        assert!(det.warnings().is_empty());
    }
}
