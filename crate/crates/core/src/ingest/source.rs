use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use super::{PlanEntry, SourceKind};
use crate::error::{Error, Result};
use crate::taxonomy::normalize_name;

/// A result returned by a source search, not yet downloaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    /// URL or filesystem path the payload comes from.
    pub origin: String,
    /// Name used to pick the stored file's extension.
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SourceError {
    /// Worth retrying (timeouts, 5xx, connection resets).
    #[error("transient: {0}")]
    Transient(String),
    /// Quota exhausted or robots/ToS refusal; the entry is skipped.
    #[error("refused: {0}")]
    Refused(String),
    /// The candidate itself is gone; other candidates may still work.
    #[error("unavailable: {0}")]
    Unavailable(String),
}

/// Pluggable image source. Implementations must be shareable across worker
/// threads; `max_in_flight` of 1 declares the adapter single-use.
pub trait ImageSource: Send + Sync {
    fn kind(&self) -> SourceKind;

    fn max_in_flight(&self) -> usize {
        1
    }

    fn search(&self, entry: &PlanEntry, limit: usize) -> Result<Vec<Candidate>, SourceError>;

    fn download(&self, candidate: &Candidate) -> Result<Vec<u8>, SourceError>;
}

/// Directory-name form of a make/model pair: "renault-kangoo".
pub fn model_slug(make: &str, model: &str) -> String {
    normalize_name(&format!("{make} {model}"))
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '-' })
        .collect()
}

/// Serves files from `<root>/<make-model slug>/`, in file-name order.
#[derive(Debug, Clone)]
pub struct LocalFolderSource {
    root: PathBuf,
}

impl LocalFolderSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        LocalFolderSource { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ImageSource for LocalFolderSource {
    fn kind(&self) -> SourceKind {
        SourceKind::LocalFolder
    }

    fn max_in_flight(&self) -> usize {
        8
    }

    fn search(&self, entry: &PlanEntry, limit: usize) -> Result<Vec<Candidate>, SourceError> {
        let dir = self.root.join(model_slug(&entry.make, &entry.model));
        let listing = match fs::read_dir(&dir) {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(SourceError::Transient(format!("{}: {e}", dir.display()))),
        };
        let mut files: Vec<PathBuf> = listing
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.is_file())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| !n.starts_with('.'))
            })
            .collect();
        files.sort();
        Ok(files
            .into_iter()
            .take(limit)
            .map(|p| Candidate {
                file_name: p.file_name().unwrap().to_string_lossy().into_owned(),
                origin: p.to_string_lossy().into_owned(),
            })
            .collect())
    }

    fn download(&self, candidate: &Candidate) -> Result<Vec<u8>, SourceError> {
        fs::read(&candidate.origin).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => SourceError::Unavailable(candidate.origin.clone()),
            _ => SourceError::Transient(format!("{}: {e}", candidate.origin)),
        })
    }
}

#[derive(Debug, Deserialize)]
struct ResultLine {
    make: String,
    model: String,
    urls: Vec<String>,
}

/// Downloads over HTTP from a pre-resolved result list: one JSON line per
/// model, `{"make": .., "model": .., "urls": [..]}`, as exported from a
/// search-engine or CAD-catalogue query. Never follows links beyond the list.
pub struct HttpListSource {
    kind: SourceKind,
    results: HashMap<String, Vec<String>>,
    agent: ureq::Agent,
    max_bytes: u64,
}

impl HttpListSource {
    pub fn new(kind: SourceKind, results: HashMap<String, Vec<String>>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent("fleet-census/0.1 (research dataset builder)")
            .build()
            .into();
        HttpListSource {
            kind,
            results,
            agent,
            max_bytes: 32 * 1024 * 1024,
        }
    }

    pub fn from_file(kind: SourceKind, path: impl AsRef<Path>, timeout: Duration) -> Result<Self> {
        let lines: Vec<ResultLine> = crate::jsonl::read(path)?;
        let mut results = HashMap::new();
        for l in lines {
            results
                .entry(model_slug(&l.make, &l.model))
                .or_insert_with(Vec::new)
                .extend(l.urls);
        }
        Ok(Self::new(kind, results, timeout))
    }
}

impl ImageSource for HttpListSource {
    fn kind(&self) -> SourceKind {
        self.kind
    }

    fn max_in_flight(&self) -> usize {
        2
    }

    fn search(&self, entry: &PlanEntry, limit: usize) -> Result<Vec<Candidate>, SourceError> {
        let urls = self
            .results
            .get(&model_slug(&entry.make, &entry.model))
            .map(Vec::as_slice)
            .unwrap_or_default();
        Ok(urls
            .iter()
            .take(limit)
            .map(|u| Candidate {
                origin: u.clone(),
                file_name: url::Url::parse(u)
                    .ok()
                    .and_then(|p| p.path_segments()?.next_back().map(String::from))
                    .unwrap_or_default(),
            })
            .collect())
    }

    fn download(&self, candidate: &Candidate) -> Result<Vec<u8>, SourceError> {
        let mut response = self
            .agent
            .get(&candidate.origin)
            .call()
            .map_err(|e| SourceError::Transient(format!("{}: {e}", candidate.origin)))?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 | 429 => {
                return Err(SourceError::Refused(format!("{}: HTTP {status}", candidate.origin)))
            }
            404 | 410 => {
                return Err(SourceError::Unavailable(format!("{}: HTTP {status}", candidate.origin)))
            }
            500..=599 | 408 => {
                return Err(SourceError::Transient(format!("{}: HTTP {status}", candidate.origin)))
            }
            _ => {
                return Err(SourceError::Unavailable(format!("{}: HTTP {status}", candidate.origin)))
            }
        }
        let mut bytes = Vec::new();
        response
            .body_mut()
            .as_reader()
            .take(self.max_bytes)
            .read_to_end(&mut bytes)
            .map_err(|e| SourceError::Transient(format!("{}: {e}", candidate.origin)))?;
        Ok(bytes)
    }
}

/// Check that a directory can be written, creating it if needed.
pub(crate) fn ensure_writable(dir: &Path) -> Result<()> {
    let fail = |e: std::io::Error| Error::config(format!("output root {} is not writable: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(fail)?;
    let _ = fs::remove_file(probe);
    Ok(())
}
