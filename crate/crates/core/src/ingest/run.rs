use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::fetch::{fetch_payloads, FetchFailure, FetchedPayload, Politeness, Throttle};
use super::source::{ensure_writable, ImageSource};
use super::{PlanEntry, QueryPlan, RawImageRecord, SourceKind};
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::taxonomy::{normalize_name, VehicleClass};

/// Raw manifest location relative to the ingest output root.
pub const RAW_MANIFEST: &str = "raw/manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IngestReportLine {
    Count {
        vehicle_class: VehicleClass,
        source: SourceKind,
        new: u64,
        existing: u64,
    },
    Failure {
        make: String,
        model: String,
        source: SourceKind,
        #[serde(flatten)]
        failure: FetchFailure,
    },
    Skipped {
        make: String,
        model: String,
        source: SourceKind,
        reason: String,
    },
    Shortfall {
        make: String,
        model: String,
        source: SourceKind,
        target: u64,
        achieved: u64,
    },
    Summary {
        new_records: u64,
        total_records: u64,
        failures: u64,
        all_skipped: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub lines: Vec<IngestReportLine>,
}

impl IngestReport {
    pub fn new_records(&self) -> u64 {
        self.summary().map(|s| s.0).unwrap_or(0)
    }

    pub fn total_records(&self) -> u64 {
        self.summary().map(|s| s.1).unwrap_or(0)
    }

    pub fn all_skipped(&self) -> bool {
        self.summary().map(|s| s.2).unwrap_or(true)
    }

    fn summary(&self) -> Option<(u64, u64, bool)> {
        self.lines.iter().find_map(|l| match l {
            IngestReportLine::Summary {
                new_records,
                total_records,
                all_skipped,
                ..
            } => Some((*new_records, *total_records, *all_skipped)),
            _ => None,
        })
    }

    pub fn failures(&self) -> impl Iterator<Item = &IngestReportLine> {
        self.lines
            .iter()
            .filter(|l| matches!(l, IngestReportLine::Failure { .. }))
    }

    /// Records per class over the whole raw manifest (new plus existing).
    pub fn class_totals(&self) -> BTreeMap<VehicleClass, u64> {
        let mut out = BTreeMap::new();
        for l in &self.lines {
            if let IngestReportLine::Count {
                vehicle_class,
                new,
                existing,
                ..
            } = l
            {
                *out.entry(*vehicle_class).or_insert(0) += new + existing;
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::jsonl::write_atomic(path, &self.lines)
    }
}

type EntryKey = (String, String, SourceKind);

fn entry_key(make: &str, model: &str, source: SourceKind) -> EntryKey {
    (normalize_name(make), normalize_name(model), source)
}

enum Msg {
    Payload(usize, FetchedPayload),
    Done {
        index: usize,
        failures: Vec<FetchFailure>,
        skipped: Option<String>,
        shortfall: u64,
    },
}

fn extension_of(file_name: &str) -> String {
    Path::new(file_name)
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .filter(|e| !e.is_empty() && e.len() <= 5 && e.chars().all(|c| c.is_ascii_alphanumeric()))
        .unwrap_or_else(|| "bin".to_string())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Writer<'a> {
    root: &'a Path,
    known_hashes: HashSet<ContentHash>,
}

impl Writer<'_> {
    /// Write the payload bytes (if not already on disk) and return its record.
    fn persist(&mut self, entry: &PlanEntry, payload: FetchedPayload) -> Result<RawImageRecord> {
        let hash = ContentHash::of(&payload.bytes);
        let ext = extension_of(&payload.candidate.file_name);
        let rel = format!("raw/{}/{}.{}", entry.vehicle_class, hash.to_hex(), ext);
        let abs = self.root.join(&rel);
        if !abs.exists() {
            crate::jsonl::write_bytes_atomic(&abs, &payload.bytes)?;
        }
        self.known_hashes.insert(hash);
        Ok(RawImageRecord {
            content_hash: hash,
            origin: payload.candidate.origin,
            source: entry.source,
            make: entry.make.clone(),
            model: entry.model.clone(),
            vehicle_class: entry.vehicle_class,
            fetched_at: unix_now(),
            byte_size: payload.bytes.len() as u64,
            stored_path: rel,
        })
    }
}

/// Execute a plan. Payload bytes are written as they arrive; manifest lines
/// are appended per entry in plan order once the entry completes, so the
/// manifest is identical regardless of worker scheduling.
///
/// Re-running skips origins already in the manifest and payloads whose hash
/// was recorded by an earlier run, so a repeated run adds nothing.
pub fn ingest_run(
    plan: &QueryPlan,
    adapters: &HashMap<SourceKind, Arc<dyn ImageSource>>,
    politeness: &BTreeMap<SourceKind, Politeness>,
    out_root: &Path,
) -> Result<IngestReport> {
    ensure_writable(out_root)?;
    let missing: Vec<String> = plan
        .entries
        .iter()
        .map(|e| e.source)
        .collect::<HashSet<_>>()
        .into_iter()
        .filter(|s| !adapters.contains_key(s))
        .map(|s| format!("no adapter configured for source {s}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(missing));
    }

    let manifest_path = out_root.join(RAW_MANIFEST);
    let existing: Vec<RawImageRecord> = crate::jsonl::read_or_empty(&manifest_path)?;
    let previous_hashes: HashSet<ContentHash> = existing.iter().map(|r| r.content_hash).collect();
    let mut known_origins: HashMap<EntryKey, HashSet<String>> = HashMap::new();
    for r in &existing {
        known_origins
            .entry(entry_key(&r.make, &r.model, r.source))
            .or_default()
            .insert(r.origin.clone());
    }

    // Entries sharing a (model, source) key share the existing-record budget.
    let mut needs = Vec::with_capacity(plan.entries.len());
    let mut budget: HashMap<EntryKey, u64> = known_origins
        .iter()
        .map(|(k, v)| (k.clone(), v.len() as u64))
        .collect();
    for e in &plan.entries {
        let have = budget.entry(entry_key(&e.make, &e.model, e.source)).or_insert(0);
        let used = (*have).min(e.target);
        *have -= used;
        needs.push(e.target - used);
    }

    let default_politeness = Politeness::default();
    let politeness_for = |kind: SourceKind| -> &Politeness {
        politeness.get(&kind).unwrap_or(&default_politeness)
    };
    let throttles: HashMap<SourceKind, Throttle> = adapters
        .iter()
        .map(|(&k, a)| (k, Throttle::new(politeness_for(k), a.as_ref())))
        .collect();
    let empty = HashSet::new();

    let workers = throttles
        .values()
        .map(|t| t.in_flight_limit())
        .sum::<usize>()
        .clamp(1, 16);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Msg>();

    let mut writer = Writer {
        root: out_root,
        known_hashes: previous_hashes.clone(),
    };
    let mut pending: BTreeMap<usize, Vec<RawImageRecord>> = BTreeMap::new();
    let mut done: BTreeMap<usize, (Vec<FetchFailure>, Option<String>, u64)> = BTreeMap::new();
    let mut commit_at = 0usize;
    let mut report_lines = Vec::new();
    let mut new_counts: BTreeMap<(VehicleClass, SourceKind), u64> = BTreeMap::new();
    let mut first_error: Option<Error> = None;

    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let needs = &needs;
            let throttles = &throttles;
            let known_origins = &known_origins;
            let empty = &empty;
            scope.spawn(move || loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = plan.entries.get(index) else { break };
                let adapter = adapters[&entry.source].as_ref();
                let origins = known_origins
                    .get(&entry_key(&entry.make, &entry.model, entry.source))
                    .unwrap_or(empty);
                let outcome = fetch_payloads(
                    entry,
                    needs[index],
                    adapter,
                    politeness_for(entry.source),
                    &throttles[&entry.source],
                    origins,
                );
                for p in outcome.payloads {
                    if tx.send(Msg::Payload(index, p)).is_err() {
                        return;
                    }
                }
                let _ = tx.send(Msg::Done {
                    index,
                    failures: outcome.failures,
                    skipped: outcome.skipped,
                    shortfall: outcome.shortfall,
                });
            });
        }
        drop(tx);

        for msg in rx {
            match msg {
                Msg::Payload(index, payload) => {
                    if first_error.is_some() {
                        continue;
                    }
                    let hash = ContentHash::of(&payload.bytes);
                    if previous_hashes.contains(&hash) {
                        // fetched in an earlier run under another origin
                        continue;
                    }
                    match writer.persist(&plan.entries[index], payload) {
                        Ok(rec) => pending.entry(index).or_default().push(rec),
                        Err(e) => first_error = Some(e),
                    }
                }
                Msg::Done {
                    index,
                    failures,
                    skipped,
                    shortfall,
                } => {
                    done.insert(index, (failures, skipped, shortfall));
                    while let Some((failures, skipped, shortfall)) = done.remove(&commit_at) {
                        let entry = &plan.entries[commit_at];
                        let records = pending.remove(&commit_at).unwrap_or_default();
                        if first_error.is_none() {
                            if let Err(e) = crate::jsonl::append(&manifest_path, &records) {
                                first_error = Some(e);
                            }
                        }
                        *new_counts.entry((entry.vehicle_class, entry.source)).or_insert(0) +=
                            records.len() as u64;
                        for failure in failures {
                            report_lines.push(IngestReportLine::Failure {
                                make: entry.make.clone(),
                                model: entry.model.clone(),
                                source: entry.source,
                                failure,
                            });
                        }
                        if let Some(reason) = skipped {
                            report_lines.push(IngestReportLine::Skipped {
                                make: entry.make.clone(),
                                model: entry.model.clone(),
                                source: entry.source,
                                reason,
                            });
                        }
                        if shortfall > 0 {
                            report_lines.push(IngestReportLine::Shortfall {
                                make: entry.make.clone(),
                                model: entry.model.clone(),
                                source: entry.source,
                                target: entry.target,
                                achieved: entry.target - shortfall,
                            });
                        }
                        commit_at += 1;
                    }
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }

    let mut existing_counts: BTreeMap<(VehicleClass, SourceKind), u64> = BTreeMap::new();
    for r in &existing {
        *existing_counts.entry((r.vehicle_class, r.source)).or_insert(0) += 1;
    }
    let keys: std::collections::BTreeSet<_> = new_counts.keys().chain(existing_counts.keys()).copied().collect();
    let mut lines: Vec<IngestReportLine> = keys
        .into_iter()
        .map(|k| IngestReportLine::Count {
            vehicle_class: k.0,
            source: k.1,
            new: new_counts.get(&k).copied().unwrap_or(0),
            existing: existing_counts.get(&k).copied().unwrap_or(0),
        })
        .collect();
    let failures = report_lines
        .iter()
        .filter(|l| matches!(l, IngestReportLine::Failure { .. }))
        .count() as u64;
    lines.extend(report_lines);
    let new_records: u64 = new_counts.values().sum();
    let total_records = existing.len() as u64 + new_records;
    lines.push(IngestReportLine::Summary {
        new_records,
        total_records,
        failures,
        all_skipped: new_records == 0,
    });
    debug_assert_eq!(
        total_records as usize,
        crate::jsonl::read_or_empty::<RawImageRecord>(&manifest_path).map(|v| v.len()).unwrap_or(0)
    );
    Ok(IngestReport { lines })
}
