//! Feature store file, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "FCFEATS\0"
//! version      u32      1
//! dim          u32      feature width D
//! rows         u64      row count
//! backbone_len u32      followed by that many bytes of UTF-8 backbone id
//! row*         32-byte content hash, u8 label index, D x f32
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::taxonomy::VehicleClass;

pub const FEATURE_STORE_MAGIC: [u8; 8] = *b"FCFEATS\0";
pub const FEATURE_STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub content_hash: ContentHash,
    pub label: u8,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub backbone: String,
    pub dim: usize,
    pub rows: Vec<FeatureRow>,
}

/// What a format check found. `warnings` are non-fatal.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreSummary {
    pub backbone: String,
    pub dim: usize,
    pub rows: u64,
    pub warnings: Vec<String>,
}

fn read_exact<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated feature store reading {what}: {e}")))?;
    Ok(buf)
}

impl FeatureStore {
    pub fn new(backbone: impl Into<String>, dim: usize) -> Self {
        FeatureStore {
            backbone: backbone.into(),
            dim,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, content_hash: ContentHash, class: VehicleClass, values: Vec<f32>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature for {content_hash}")));
        }
        self.rows.push(FeatureRow {
            content_hash,
            label: class.index() as u8,
            values,
        });
        Ok(())
    }

    /// Sort rows by content hash.
    pub fn canonicalize(&mut self) {
        self.rows.sort_by_key(|a| a.content_hash);
    }

    pub fn row(&self, hash: &ContentHash) -> Option<&FeatureRow> {
        self.rows.iter().find(|r| &r.content_hash == hash)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::Format(format!("writing feature store: {e}"));
        w.write_all(&FEATURE_STORE_MAGIC).map_err(io)?;
        w.write_all(&FEATURE_STORE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.backbone.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(self.backbone.as_bytes()).map_err(io)?;
        for r in &self.rows {
            w.write_all(r.content_hash.as_bytes()).map_err(io)?;
            w.write_all(&[r.label]).map_err(io)?;
            for v in &r.values {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::jsonl::write_bytes_atomic(path, &self.to_bytes())
    }

    /// Parse and validate: magic, version, exact length, finite values,
    /// labels in range, unique hashes.
    pub fn read(r: &mut impl Read) -> Result<Self> {
        let magic: [u8; 8] = read_exact(r, "magic")?;
        if magic != FEATURE_STORE_MAGIC {
            return Err(Error::Format("not a feature store (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_exact(r, "version")?);
        if version != FEATURE_STORE_VERSION {
            return Err(Error::Format(format!("unsupported feature store version {version}")));
        }
        let dim = u32::from_le_bytes(read_exact(r, "dim")?) as usize;
        let count = u64::from_le_bytes(read_exact(r, "row count")?);
        let name_len = u32::from_le_bytes(read_exact(r, "backbone length")?) as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("backbone id length {name_len} is implausible")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated backbone id: {e}")))?;
        let backbone = String::from_utf8(name)
            .map_err(|_| Error::Format("backbone id is not UTF-8".into()))?;
        if dim == 0 {
            return Err(Error::Format("feature dimension is zero".into()));
        }
        let mut rows = Vec::with_capacity(count.min(1 << 20) as usize);
        let mut seen = HashSet::new();
        let mut buf = vec![0u8; dim * 4];
        for i in 0..count {
            let hash = ContentHash(read_exact(r, "row hash")?);
            let [label] = read_exact::<1>(r, "row label")?;
            if label as usize >= VehicleClass::COUNT {
                return Err(Error::Format(format!("row {i}: label {label} out of range")));
            }
            r.read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated feature store at row {i}: {e}")))?;
            let values: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("row {i}: non-finite feature value")));
            }
            if !seen.insert(hash) {
                return Err(Error::Format(format!("row {i}: duplicate content hash {hash}")));
            }
            rows.push(FeatureRow {
                content_hash: hash,
                label,
                values,
            });
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::Format(e.to_string()))? != 0 {
            return Err(Error::Format("trailing bytes after last row".into()));
        }
        Ok(FeatureStore { backbone, dim, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut BufReader::new(f)).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Format check for files produced elsewhere. Errors on anything the
    /// reader rejects; warns when rows are not in canonical hash order or the
    /// backbone id is empty.
    pub fn check_file(path: impl AsRef<Path>) -> Result<StoreSummary> {
        let store = Self::load(path)?;
        let mut warnings = Vec::new();
        if store.backbone.trim().is_empty() {
            warnings.push("empty backbone id".to_string());
        }
        if store.rows.windows(2).any(|w| w[0].content_hash > w[1].content_hash) {
            warnings.push("rows are not in content-hash order".to_string());
        }
        Ok(StoreSummary {
            backbone: store.backbone,
            dim: store.dim,
            rows: store.rows.len() as u64,
            warnings,
        })
    }
}
