use std::collections::{BTreeMap, HashSet};
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use super::crop::{crop_and_filter, CropDecision};
use super::dedup::dedup;
use super::detect::{detect, Detector};
use super::validate::{validate_bytes, Validation};
use super::{CropRecord, CurationConfig, OutcomeKind};
use crate::error::{Error, Result};
use crate::hash::{difference_hash, ContentHash};
use crate::ingest::{RawImageRecord, RAW_MANIFEST};
use crate::taxonomy::VehicleClass;

/// Kept crops, relative to the curation output root.
pub const CURATED_MANIFEST: &str = "curated/crops.jsonl";
/// One outcome line per input image, relative to the curation output root.
pub const OUTCOMES_FILE: &str = "curated/outcomes.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub content_hash: ContentHash,
    pub origin: String,
    pub vehicle_class: VehicleClass,
    pub outcome: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crops: Vec<ContentHash>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurationReportLine {
    Count {
        vehicle_class: VehicleClass,
        outcome: OutcomeKind,
        images: u64,
    },
    Summary {
        inputs: u64,
        accepted_images: u64,
        crops_kept: u64,
        crops_too_small: u64,
        crops_duplicate: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CurationReport {
    pub counts: BTreeMap<(VehicleClass, OutcomeKind), u64>,
    pub inputs: u64,
    pub crops_kept: u64,
    pub crops_too_small: u64,
    pub crops_duplicate: u64,
}

impl CurationReport {
    pub fn outcome_total(&self, kind: OutcomeKind) -> u64 {
        self.counts
            .iter()
            .filter(|((_, k), _)| *k == kind)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn accepted_images(&self) -> u64 {
        self.outcome_total(OutcomeKind::Accepted)
    }

    pub fn lines(&self) -> Vec<CurationReportLine> {
        let mut lines: Vec<_> = self
            .counts
            .iter()
            .map(|(&(vehicle_class, outcome), &images)| CurationReportLine::Count {
                vehicle_class,
                outcome,
                images,
            })
            .collect();
        lines.push(CurationReportLine::Summary {
            inputs: self.inputs,
            accepted_images: self.accepted_images(),
            crops_kept: self.crops_kept,
            crops_too_small: self.crops_too_small,
            crops_duplicate: self.crops_duplicate,
        });
        lines
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::jsonl::write_atomic(path, &self.lines())
    }
}

/// Per-image result before dedup.
enum Stage1 {
    Accepted { crops: Vec<CropRecord>, too_small: usize },
    Rejected(OutcomeKind, Option<String>),
}

fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let img = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.clone(),
        other => DynamicImage::ImageRgba8(other.to_rgba8()),
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Curation(format!("PNG encode failed: {e}")))?;
    Ok(out.into_inner())
}

fn read_with_retry(path: &Path) -> std::io::Result<Vec<u8>> {
    std::fs::read(path).or_else(|_| std::fs::read(path))
}

fn process_one(
    raw: &RawImageRecord,
    ingest_root: &Path,
    out_root: &Path,
    detector: &dyn Detector,
    config: &CurationConfig,
) -> Stage1 {
    let path = ingest_root.join(&raw.stored_path);
    let bytes = match read_with_retry(&path) {
        Ok(b) => b,
        Err(e) => return Stage1::Rejected(OutcomeKind::Failed, Some(format!("{}: {e}", path.display()))),
    };
    if ContentHash::of(&bytes) != raw.content_hash {
        return Stage1::Rejected(OutcomeKind::RejectedCorrupt, Some("stored bytes do not match content hash".into()));
    }
    let file_name = Path::new(&raw.stored_path)
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("");
    let image = match validate_bytes(&bytes, file_name) {
        Validation::Ok { image, .. } => image,
        Validation::RejectedCorrupt(reason) => return Stage1::Rejected(OutcomeKind::RejectedCorrupt, Some(reason)),
        Validation::RejectedTypeMismatch { sniffed, extension } => {
            return Stage1::Rejected(
                OutcomeKind::RejectedTypeMismatch,
                Some(format!("{sniffed:?} data with .{extension} extension")),
            )
        }
    };
    let detections = match detect(&raw.content_hash, &image, detector, config.confidence_floor) {
        Ok(d) => d,
        Err(e) => return Stage1::Rejected(OutcomeKind::Failed, Some(e.to_string())),
    };
    let (crops, too_small) = match crop_and_filter(&image, &detections, config) {
        Ok(CropDecision::Accepted { crops, too_small }) => (crops, too_small),
        Ok(CropDecision::RejectedNoVehicle) => return Stage1::Rejected(OutcomeKind::RejectedNoVehicle, None),
        Ok(CropDecision::RejectedTooSmall) => return Stage1::Rejected(OutcomeKind::RejectedTooSmall, None),
        Err(e) => return Stage1::Rejected(OutcomeKind::Failed, Some(e.to_string())),
    };
    let mut records = Vec::with_capacity(crops.len());
    for crop in crops {
        let png = match encode_png(&crop.image) {
            Ok(p) => p,
            Err(e) => return Stage1::Rejected(OutcomeKind::Failed, Some(e.to_string())),
        };
        let hash = ContentHash::of(&png);
        let rel = format!("curated/{}/{}.png", raw.vehicle_class, hash.to_hex());
        let abs = out_root.join(&rel);
        if !abs.exists() {
            if let Err(e) = crate::jsonl::write_bytes_atomic(&abs, &png) {
                return Stage1::Rejected(OutcomeKind::Failed, Some(e.to_string()));
            }
        }
        records.push(CropRecord {
            content_hash: hash,
            parent_hash: raw.content_hash,
            stored_path: rel,
            vehicle_class: raw.vehicle_class,
            source: raw.source,
            make: raw.make.clone(),
            model: raw.model.clone(),
            origin: raw.origin.clone(),
            label: crop.detection.label.clone(),
            bbox: crop.detection.bbox,
            dhash: difference_hash(&crop.image),
        });
    }
    Stage1::Accepted { crops: records, too_small }
}

/// Curate every raw image listed under `ingest_root`. Crops are written to
/// `<out_root>/curated/<class>/<hash>.png`; the kept-crop manifest and the
/// per-image outcomes file are rewritten in full, so a rerun over the same
/// inputs produces identical files and an identical report.
pub fn curate_run(
    ingest_root: &Path,
    detector: &dyn Detector,
    config: &CurationConfig,
    out_root: &Path,
) -> Result<CurationReport> {
    let raws: Vec<RawImageRecord> = crate::jsonl::read(ingest_root.join(RAW_MANIFEST))?;
    let n = raws.len();
    let workers = thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(detector.max_parallel())
        .clamp(1, n.max(1));

    let results: Mutex<Vec<Option<Stage1>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = process_one(&raws[i], ingest_root, out_root, detector, config);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results: Vec<Stage1> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every image processed"))
        .collect();

    // global dedup over all candidate crops, tagged with their image index
    let mut all_crops = Vec::new();
    let mut too_small_total = 0u64;
    for (i, r) in results.iter().enumerate() {
        if let Stage1::Accepted { crops, too_small } = r {
            too_small_total += *too_small as u64;
            all_crops.extend(crops.iter().cloned().map(|c| (i, c)));
        }
    }
    let candidates: Vec<CropRecord> = all_crops.iter().map(|(_, c)| c.clone()).collect();
    let deduped = dedup(candidates, config.dedup_max_hamming);
    let mut kept_keys: HashSet<(ContentHash, ContentHash, String, u32, u32)> = HashSet::new();
    for k in &deduped.kept {
        let (a, b, c, d, e) = k.order_key();
        kept_keys.insert((a, b, c.to_string(), d, e));
    }
    let kept_hashes: HashSet<ContentHash> = deduped.kept.iter().map(|c| c.content_hash).collect();
    for r in &deduped.rejected {
        if !kept_hashes.contains(&r.content_hash) {
            let _ = std::fs::remove_file(out_root.join(&r.stored_path));
        }
    }

    let mut report = CurationReport {
        inputs: n as u64,
        crops_kept: deduped.kept.len() as u64,
        crops_too_small: too_small_total,
        crops_duplicate: deduped.rejected.len() as u64,
        ..CurationReport::default()
    };
    let mut outcomes = Vec::with_capacity(n);
    for (i, (raw, r)) in raws.iter().zip(&results).enumerate() {
        let (outcome, reason, crops) = match r {
            Stage1::Accepted { .. } => {
                let kept: Vec<ContentHash> = all_crops
                    .iter()
                    .filter(|(j, _)| *j == i)
                    .filter(|(_, c)| {
                        let (a, b, o, x, y) = c.order_key();
                        kept_keys.contains(&(a, b, o.to_string(), x, y))
                    })
                    .map(|(_, c)| c.content_hash)
                    .collect();
                if kept.is_empty() {
                    (OutcomeKind::RejectedDuplicate, None, Vec::new())
                } else {
                    (OutcomeKind::Accepted, None, kept)
                }
            }
            Stage1::Rejected(kind, reason) => (*kind, reason.clone(), Vec::new()),
        };
        *report.counts.entry((raw.vehicle_class, outcome)).or_insert(0) += 1;
        outcomes.push(OutcomeRecord {
            content_hash: raw.content_hash,
            origin: raw.origin.clone(),
            vehicle_class: raw.vehicle_class,
            outcome,
            reason,
            crops,
        });
    }

    let mut kept = deduped.kept;
    kept.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    crate::jsonl::write_atomic(out_root.join(CURATED_MANIFEST), &kept)?;
    crate::jsonl::write_atomic(out_root.join(OUTCOMES_FILE), &outcomes)?;
    Ok(report)
}
