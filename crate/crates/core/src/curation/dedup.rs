use super::CropRecord;
use crate::hash::hamming;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupResult {
    pub kept: Vec<CropRecord>,
    pub rejected: Vec<CropRecord>,
}

/// Walk crops in ascending content-hash order and keep each one unless its
/// difference hash is within `max_hamming` bits of an already kept crop.
/// The kept set therefore does not depend on input order.
pub fn dedup(crops: Vec<CropRecord>, max_hamming: u32) -> DedupResult {
    let mut sorted = crops;
    sorted.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    let mut out = DedupResult::default();
    for crop in sorted {
        let dup = out
            .kept
            .iter()
            .any(|k| hamming(k.dhash, crop.dhash) <= max_hamming);
        if dup {
            out.rejected.push(crop);
        } else {
            out.kept.push(crop);
        }
    }
    out
}
