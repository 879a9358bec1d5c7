//! Manifest file format: JSON lines, first line a header, then an event log.
//!
//! ```text
//! {"kind":"header","schema_version":1,"created_by":"fleet-census 0.1.0","created_at":1760000000}
//! {"kind":"entry","content_hash":"..","stored_path":"..","vehicle_class":"light-duty",..}
//! {"kind":"quarantine","content_hash":"..","quarantined":true}
//! {"kind":"split","content_hash":"..","split":"test"}
//! ```
//!
//! Loading replays the log in order. Mutations only ever append; `compact`
//! is the one operation that rewrites the file (header plus final entries).

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::curation::CropRecord;
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::ingest::SourceKind;
use crate::taxonomy::VehicleClass;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Unassigned,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub content_hash: ContentHash,
    pub stored_path: String,
    pub vehicle_class: VehicleClass,
    pub source: SourceKind,
    pub make: String,
    pub model: String,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub quarantined: bool,
}

impl ManifestEntry {
    pub fn from_crop(crop: &CropRecord) -> Self {
        ManifestEntry {
            content_hash: crop.content_hash,
            stored_path: crop.stored_path.clone(),
            vehicle_class: crop.vehicle_class,
            source: crop.source,
            make: crop.make.clone(),
            model: crop.model.clone(),
            split: Split::Unassigned,
            quarantined: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub created_by: String,
    pub created_at: u64,
}

impl ManifestHeader {
    fn fresh() -> Self {
        ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            created_by: format!("fleet-census {}", env!("CARGO_PKG_VERSION")),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Event {
    Header(ManifestHeader),
    Entry(ManifestEntry),
    Quarantine {
        content_hash: ContentHash,
        quarantined: bool,
    },
    Split {
        content_hash: ContentHash,
        split: Split,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    entries: Vec<ManifestEntry>,
    index: HashMap<ContentHash, usize>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest::new()
    }
}

impl DatasetManifest {
    pub fn new() -> Self {
        DatasetManifest {
            header: ManifestHeader::fresh(),
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Build an in-memory manifest; content hashes must be unique.
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut m = DatasetManifest::new();
        for e in entries {
            m.push(e)?;
        }
        Ok(m)
    }

    fn push(&mut self, entry: ManifestEntry) -> Result<()> {
        if self.index.contains_key(&entry.content_hash) {
            return Err(Error::Duplicate(format!(
                "content hash {} already in manifest",
                entry.content_hash
            )));
        }
        self.index.insert(entry.content_hash, self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, hash: &ContentHash) -> Option<&ManifestEntry> {
        self.index.get(hash).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        self.index.contains_key(hash)
    }

    fn get_mut(&mut self, hash: &ContentHash) -> Result<&mut ManifestEntry> {
        match self.index.get(hash) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(Error::NotFound(format!("content hash {hash} not in manifest"))),
        }
    }

    /// Split labels by content hash.
    pub fn splits(&self) -> BTreeMap<ContentHash, Split> {
        self.entries.iter().map(|e| (e.content_hash, e.split)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let events: Vec<Event> = crate::jsonl::read(path)?;
        let mut it = events.into_iter().enumerate();
        let mut manifest = match it.next() {
            None => return Ok(DatasetManifest::new()),
            Some((_, Event::Header(h))) => {
                if h.schema_version != MANIFEST_SCHEMA_VERSION {
                    return Err(Error::Format(format!(
                        "{}: unsupported manifest schema version {}",
                        path.display(),
                        h.schema_version
                    )));
                }
                DatasetManifest {
                    header: h,
                    entries: Vec::new(),
                    index: HashMap::new(),
                }
            }
            Some(_) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "manifest must start with a header line".into(),
                })
            }
        };
        for (i, event) in it {
            let at = |e: Error| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            };
            manifest.apply(event).map_err(at)?;
        }
        Ok(manifest)
    }

    pub fn load_or_new(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    fn apply(&mut self, event: Event) -> Result<()> {
        match event {
            Event::Header(_) => Err(Error::Format("header repeated mid-file".into())),
            Event::Entry(e) => {
                if e.split != Split::Unassigned {
                    return Err(Error::Validation(
                        "entries are appended unassigned; splits are separate events".into(),
                    ));
                }
                self.push(e)
            }
            Event::Quarantine {
                content_hash,
                quarantined,
            } => {
                self.get_mut(&content_hash)?.quarantined = quarantined;
                Ok(())
            }
            Event::Split {
                content_hash,
                split,
            } => {
                self.get_mut(&content_hash)?.split = split;
                Ok(())
            }
        }
    }

    fn compacted_events(&self) -> Vec<Event> {
        let mut events = vec![Event::Header(self.header.clone())];
        for e in &self.entries {
            events.push(Event::Entry(ManifestEntry {
                split: Split::Unassigned,
                quarantined: false,
                ..e.clone()
            }));
        }
        for e in &self.entries {
            if e.quarantined {
                events.push(Event::Quarantine {
                    content_hash: e.content_hash,
                    quarantined: true,
                });
            }
        }
        for e in &self.entries {
            if e.split != Split::Unassigned {
                events.push(Event::Split {
                    content_hash: e.content_hash,
                    split: e.split,
                });
            }
        }
        events
    }
}

/// Exclusive writer: holds an OS file lock on `<manifest>.lock` for its lifetime.
pub struct ManifestWriter {
    path: PathBuf,
    _lock: File,
    manifest: DatasetManifest,
}

impl ManifestWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        crate::jsonl::ensure_parent(&path)?;
        let mut lock_name = path.file_name().unwrap_or_default().to_os_string();
        lock_name.push(".lock");
        let lock_path = path.with_file_name(lock_name);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| Error::io(&lock_path, e))?;
        lock.lock().map_err(|e| Error::io(&lock_path, e))?;
        let manifest = if path.exists() {
            DatasetManifest::load(&path)?
        } else {
            let m = DatasetManifest::new();
            crate::jsonl::write_atomic(&path, &[Event::Header(m.header.clone())])?;
            m
        };
        Ok(ManifestWriter {
            path,
            _lock: lock,
            manifest,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn append(&mut self, events: Vec<Event>) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in &events {
            buf.push_str(&crate::jsonl::to_line(e));
        }
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))?;
        for e in events {
            self.manifest.apply(e)?;
        }
        Ok(())
    }

    /// Append entries whose content hash is not yet present. Returns how many were added.
    pub fn append_missing(&mut self, entries: impl IntoIterator<Item = ManifestEntry>) -> Result<usize> {
        let mut seen = std::collections::HashSet::new();
        let events: Vec<Event> = entries
            .into_iter()
            .filter(|e| !self.manifest.contains(&e.content_hash) && seen.insert(e.content_hash))
            .map(|e| {
                Event::Entry(ManifestEntry {
                    split: Split::Unassigned,
                    quarantined: false,
                    ..e
                })
            })
            .collect();
        let n = events.len();
        self.append(events)?;
        Ok(n)
    }

    pub fn set_quarantined(&mut self, hash: &ContentHash, quarantined: bool) -> Result<bool> {
        let current = self
            .manifest
            .get(hash)
            .ok_or_else(|| Error::NotFound(format!("content hash {hash} not in manifest")))?;
        if current.quarantined == quarantined {
            return Ok(false);
        }
        self.append(vec![Event::Quarantine {
            content_hash: *hash,
            quarantined,
        }])?;
        Ok(true)
    }

    /// Give every entry the split in `assignments`, or `Unassigned` when absent.
    /// Only changed labels are appended. Returns the number of changes.
    pub fn assign_splits(&mut self, assignments: &BTreeMap<ContentHash, Split>) -> Result<usize> {
        for h in assignments.keys() {
            if !self.manifest.contains(h) {
                return Err(Error::NotFound(format!("content hash {h} not in manifest")));
            }
        }
        let events: Vec<Event> = self
            .manifest
            .entries
            .iter()
            .filter_map(|e| {
                let want = assignments.get(&e.content_hash).copied().unwrap_or_default();
                (want != e.split).then_some(Event::Split {
                    content_hash: e.content_hash,
                    split: want,
                })
            })
            .collect();
        let n = events.len();
        self.append(events)?;
        Ok(n)
    }

    /// Rewrite the log as header + entries + current flags.
    pub fn compact(&mut self) -> Result<()> {
        crate::jsonl::write_atomic(&self.path, &self.manifest.compacted_events())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn entry(tag: &str, class: VehicleClass) -> ManifestEntry {
        ManifestEntry {
            content_hash: ContentHash::of(tag.as_bytes()),
            stored_path: format!("curated/{class}/{tag}.png"),
            vehicle_class: class,
            source: SourceKind::LocalFolder,
            make: "Renault".into(),
            model: "Kangoo".into(),
            split: Split::Unassigned,
            quarantined: false,
        }
    }

    #[test]
    fn append_quarantine_split_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let a = entry("a", VehicleClass::LightDuty);
        let b = entry("b", VehicleClass::HeavyDuty);
        {
            let mut w = ManifestWriter::open(&path).unwrap();
            assert_eq!(w.append_missing(vec![a.clone(), b.clone(), a.clone()]).unwrap(), 2);
            assert!(w.set_quarantined(&a.content_hash, true).unwrap());
            assert!(!w.set_quarantined(&a.content_hash, true).unwrap());
            let assign = BTreeMap::from([(b.content_hash, Split::Test)]);
            assert_eq!(w.assign_splits(&assign).unwrap(), 1);
            assert_eq!(w.assign_splits(&assign).unwrap(), 0);
        }
        let before = std::fs::read_to_string(&path).unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        assert!(m.get(&a.content_hash).unwrap().quarantined);
        assert_eq!(m.get(&b.content_hash).unwrap().split, Split::Test);
        assert_eq!(before.lines().count(), 5);

        let mut w = ManifestWriter::open(&path).unwrap();
        w.compact().unwrap();
        drop(w);
        assert_eq!(DatasetManifest::load(&path).unwrap().entries(), m.entries());
    }

    #[test]
    fn unknown_hash_in_event_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut w = ManifestWriter::open(&path).unwrap();
        assert!(matches!(w.set_quarantined(&ContentHash::of(b"zz"), true), Err(Error::NotFound(_))));
    }

    #[test]
    fn duplicate_hash_rejected_in_memory() {
        let a = entry("a", VehicleClass::LightDuty);
        assert!(DatasetManifest::from_entries(vec![a.clone(), a]).is_err());
    }

    #[test]
    fn headerless_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let line = serde_json::json!({"kind": "entry"}).to_string();
        std::fs::write(&path, line).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
    }
}
