//! Query planning and raw-image acquisition.
//!
//! A [`QueryPlan`] lists one entry per (model, source) with a target image
//! count. [`ingest_run`] executes it against [`ImageSource`] adapters and
//! persists every payload under `<out>/raw/` together with a JSON-lines
//! manifest of [`RawImageRecord`]s.

mod fetch;
mod plan;
mod run;
mod source;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::taxonomy::VehicleClass;

pub use fetch::{fetch, FetchFailure, FetchOutcome, FetchedPayload, Politeness, RateLimiter};
pub use plan::{build_query_plan, PlanEntry, PlanRequest, QueryPlan, SourceMix};
pub use run::{ingest_run, IngestReport, IngestReportLine, RAW_MANIFEST};
pub use source::{model_slug, Candidate, HttpListSource, ImageSource, LocalFolderSource, SourceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    SearchEngine,
    CadRender,
    LocalFolder,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [
        SourceKind::SearchEngine,
        SourceKind::CadRender,
        SourceKind::LocalFolder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::SearchEngine => "search-engine",
            SourceKind::CadRender => "cad-render",
            SourceKind::LocalFolder => "local-folder",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Validation(format!("unknown source kind {s:?}")))
    }
}

/// One persisted raw payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawImageRecord {
    pub content_hash: ContentHash,
    pub origin: String,
    pub source: SourceKind,
    pub make: String,
    pub model: String,
    pub vehicle_class: VehicleClass,
    /// Unix seconds.
    pub fetched_at: u64,
    pub byte_size: u64,
    /// Relative to the ingest output root.
    pub stored_path: String,
}
