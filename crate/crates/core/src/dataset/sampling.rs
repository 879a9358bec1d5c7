use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::ingest::SourceKind;
use crate::rng::SplitMix64;
use crate::taxonomy::VehicleClass;

/// Selected content hashes per class, each list in ascending hash order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BalancedView {
    pub by_class: BTreeMap<VehicleClass, Vec<ContentHash>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ViewLine {
    content_hash: ContentHash,
    vehicle_class: VehicleClass,
}

impl BalancedView {
    pub fn len(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_sizes(&self) -> BTreeMap<VehicleClass, usize> {
        self.by_class.iter().map(|(c, v)| (*c, v.len())).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let lines: Vec<ViewLine> = self
            .by_class
            .iter()
            .flat_map(|(c, hs)| {
                hs.iter().map(|h| ViewLine {
                    content_hash: *h,
                    vehicle_class: *c,
                })
            })
            .collect();
        crate::jsonl::write_atomic(path, &lines)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let lines: Vec<ViewLine> = crate::jsonl::read(path)?;
        let mut view = BalancedView::default();
        for l in lines {
            view.by_class.entry(l.vehicle_class).or_default().push(l.content_hash);
        }
        for v in view.by_class.values_mut() {
            v.sort();
        }
        Ok(view)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceOutcome {
    pub view: BalancedView,
    /// Classes with fewer eligible entries than requested, with their counts.
    pub shortfalls: BTreeMap<VehicleClass, usize>,
    /// Largest size every class can provide: min over classes of min(per_class, available).
    pub common_size: usize,
}

/// Select up to `per_class` non-quarantined entries per class by seeded
/// uniform sampling without replacement. With `strict`, every class is cut
/// to `common_size` so all classes come out equal.
///
/// Candidates are ordered by content hash before sampling, and each class
/// draws from its own derived stream, so the result depends only on the
/// manifest contents and the seed.
pub fn balance(manifest: &DatasetManifest, per_class: usize, seed: u64, strict: bool) -> Result<BalanceOutcome> {
    if per_class == 0 {
        return Err(Error::Balance("per-class size must be positive".into()));
    }
    let mut available: BTreeMap<VehicleClass, Vec<ContentHash>> =
        VehicleClass::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for e in manifest.entries().iter().filter(|e| !e.quarantined) {
        available.get_mut(&e.vehicle_class).unwrap().push(e.content_hash);
    }
    let empty: Vec<&str> = available
        .iter()
        .filter(|(_, v)| v.is_empty())
        .map(|(c, _)| c.as_str())
        .collect();
    if !empty.is_empty() {
        return Err(Error::Balance(format!("no eligible entries for class {}", empty.join(", "))));
    }
    let shortfalls: BTreeMap<VehicleClass, usize> = available
        .iter()
        .filter(|(_, v)| v.len() < per_class)
        .map(|(c, v)| (*c, v.len()))
        .collect();
    let common_size = available.values().map(|v| v.len().min(per_class)).min().unwrap_or(0);

    let mut view = BalancedView::default();
    for (class, mut hashes) in available {
        hashes.sort();
        let take = if strict { common_size } else { per_class.min(hashes.len()) };
        let mut rng = SplitMix64::derive(seed, &format!("balance/{class}"));
        let mut picked = rng.sample(&hashes, take);
        picked.sort();
        view.by_class.insert(class, picked);
    }
    Ok(BalanceOutcome {
        view,
        shortfalls,
        common_size,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub labels: BTreeMap<ContentHash, Split>,
}

impl SplitAssignment {
    pub fn count(&self, split: Split) -> usize {
        self.labels.values().filter(|&&s| s == split).count()
    }
}

/// Stratified split: each class sends `round(test_fraction * size)` of its
/// members (after a seeded shuffle of the hash-ordered list) to test, the
/// rest to train.
pub fn split(view: &BalancedView, test_fraction: f64, seed: u64) -> Result<SplitAssignment> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!("test fraction must be in (0,1), got {test_fraction}")));
    }
    if view.is_empty() {
        return Err(Error::Split("balanced view is empty".into()));
    }
    let mut labels = BTreeMap::new();
    for (class, members) in &view.by_class {
        if members.is_empty() {
            continue;
        }
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        if n_test == 0 {
            return Err(Error::Split(format!(
                "fraction {test_fraction} gives no test entries for class {class} ({} members)",
                members.len()
            )));
        }
        let mut order = members.clone();
        order.sort();
        SplitMix64::derive(seed, &format!("split/{class}")).shuffle(&mut order);
        for (i, h) in order.into_iter().enumerate() {
            labels.insert(h, if i < n_test { Split::Test } else { Split::Train });
        }
    }
    Ok(SplitAssignment { labels })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub quarantined: usize,
    pub by_class: BTreeMap<VehicleClass, usize>,
    pub by_source: BTreeMap<SourceKind, usize>,
    pub by_split: BTreeMap<Split, usize>,
}

/// Counts over non-quarantined entries.
pub fn stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut s = DatasetStats {
        by_class: VehicleClass::ALL.iter().map(|&c| (c, 0)).collect(),
        by_split: [Split::Unassigned, Split::Train, Split::Test].into_iter().map(|k| (k, 0)).collect(),
        ..DatasetStats::default()
    };
    for e in manifest.entries() {
        if e.quarantined {
            s.quarantined += 1;
            continue;
        }
        s.total += 1;
        *s.by_class.entry(e.vehicle_class).or_insert(0) += 1;
        *s.by_source.entry(e.source).or_insert(0) += 1;
        *s.by_split.entry(e.split).or_insert(0) += 1;
    }
    s
}
