//! The curated-image manifest, class balancing and stratified splits.

mod manifest;
mod sampling;

pub use manifest::{
    DatasetManifest, ManifestEntry, ManifestHeader, ManifestWriter, Split, MANIFEST_SCHEMA_VERSION,
};
pub use sampling::{balance, split, stats, BalanceOutcome, BalancedView, DatasetStats, SplitAssignment};
