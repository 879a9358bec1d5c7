//! Raw bytes to clean vehicle crops: corrupt-file and type-mismatch
//! rejection, detector-driven cropping, and perceptual-hash dedup.

mod crop;
mod dedup;
mod detect;
mod run;
mod validate;

use serde::{Deserialize, Serialize};

use crate::hash::ContentHash;
use crate::ingest::SourceKind;
use crate::taxonomy::VehicleClass;

pub use crop::{crop_and_filter, Crop, CropDecision};
pub use dedup::{dedup, DedupResult};
pub use detect::{
    detect, write_sidecar, Detector, SidecarDetector, SidecarHeader, SidecarLine, SIDECAR_FORMAT,
    SIDECAR_VERSION,
};
pub use run::{curate_run, CurationReport, OutcomeRecord, CURATED_MANIFEST, OUTCOMES_FILE};
pub use validate::{format_for_extension, validate_bytes, validate_file, Validation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BoundingBox {
    pub fn fits(&self, image_width: u32, image_height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x) + u64::from(self.width) <= u64::from(image_width)
            && u64::from(self.y) + u64::from(self.height) <= u64::from(image_height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    #[serde(flatten)]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub confidence_floor: f64,
    pub min_crop_side: u32,
    pub vehicle_labels: Vec<String>,
    /// Crops whose difference hashes differ in at most this many bits are duplicates.
    pub dedup_max_hamming: u32,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            confidence_floor: 0.5,
            min_crop_side: 64,
            vehicle_labels: ["car", "truck", "bus", "van"].map(String::from).to_vec(),
            dedup_max_hamming: 4,
        }
    }
}

impl CurationConfig {
    pub fn is_vehicle(&self, label: &str) -> bool {
        let label = label.trim();
        self.vehicle_labels.iter().any(|v| v.eq_ignore_ascii_case(label))
    }
}

/// A stored, accepted crop and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    /// SHA-256 of the stored PNG.
    pub content_hash: ContentHash,
    pub parent_hash: ContentHash,
    /// Relative to the curation output root.
    pub stored_path: String,
    pub vehicle_class: VehicleClass,
    pub source: SourceKind,
    pub make: String,
    pub model: String,
    pub origin: String,
    pub label: String,
    #[serde(flatten)]
    pub bbox: BoundingBox,
    #[serde(with = "hex_u64")]
    pub dhash: u64,
}

impl CropRecord {
    /// Dedup order: content hash first, provenance breaks exact-content ties.
    pub fn order_key(&self) -> (ContentHash, ContentHash, &str, u32, u32) {
        (self.content_hash, self.parent_hash, self.origin.as_str(), self.bbox.x, self.bbox.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Accepted,
    RejectedCorrupt,
    RejectedTypeMismatch,
    RejectedNoVehicle,
    RejectedDuplicate,
    RejectedTooSmall,
    /// Detector or I/O failure; recorded so every input keeps one outcome.
    Failed,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 7] = [
        OutcomeKind::Accepted,
        OutcomeKind::RejectedCorrupt,
        OutcomeKind::RejectedTypeMismatch,
        OutcomeKind::RejectedNoVehicle,
        OutcomeKind::RejectedDuplicate,
        OutcomeKind::RejectedTooSmall,
        OutcomeKind::Failed,
    ];
}

/// Exactly one per input image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CurationOutcome {
    Accepted(Vec<CropRecord>),
    RejectedCorrupt,
    RejectedTypeMismatch,
    RejectedNoVehicle,
    RejectedDuplicate,
    RejectedTooSmall,
    Failed(String),
}

impl CurationOutcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            CurationOutcome::Accepted(_) => OutcomeKind::Accepted,
            CurationOutcome::RejectedCorrupt => OutcomeKind::RejectedCorrupt,
            CurationOutcome::RejectedTypeMismatch => OutcomeKind::RejectedTypeMismatch,
            CurationOutcome::RejectedNoVehicle => OutcomeKind::RejectedNoVehicle,
            CurationOutcome::RejectedDuplicate => OutcomeKind::RejectedDuplicate,
            CurationOutcome::RejectedTooSmall => OutcomeKind::RejectedTooSmall,
            CurationOutcome::Failed(_) => OutcomeKind::Failed,
        }
    }
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}
