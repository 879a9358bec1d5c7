//! Pipeline configuration: one TOML file with a section per stage.
//!
//! Precedence, highest first: `--set section.key=value` overrides on the
//! command line, then the config file, then built-in defaults. Seeds have no
//! default and must be given explicitly.
//!
//! ```toml
//! [paths]
//! workspace = "work"            # relative to the config file
//! registry = "registry.tsv"     # omitted: the bundled registry
//! manifest = "dataset/manifest.jsonl"  # relative to the workspace
//!
//! [ingest]
//! per_class = 20
//! local_folder = "images"
//! [ingest.sources]
//! local-folder = 1.0
//!
//! [curate]
//! detections = "detections.jsonl"
//!
//! [dataset]
//! per_class = 18
//! seed = 7
//!
//! [extract]
//! mode = "synthetic"
//! seed = 7
//!
//! [train]
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::curation::CurationConfig;
use crate::error::{Error, Result};
use crate::evaluation::ReportFormat;
use crate::ingest::{Politeness, SourceKind, SourceMix};
use crate::learner::TrainConfig;

const SECTIONS: [&str; 7] = ["paths", "ingest", "curate", "dataset", "extract", "train", "eval"];

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PathsSection {
    workspace: PathBuf,
    registry: Option<PathBuf>,
    manifest: PathBuf,
    features: PathBuf,
    head: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            workspace: PathBuf::from("."),
            registry: None,
            manifest: PathBuf::from("dataset/manifest.jsonl"),
            features: PathBuf::from("features/features.bin"),
            head: PathBuf::from("model/head.bin"),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IngestSection {
    per_class: Option<u64>,
    sources: BTreeMap<SourceKind, f64>,
    local_folder: Option<PathBuf>,
    result_lists: BTreeMap<SourceKind, PathBuf>,
    timeout_ms: Option<u64>,
    politeness: BTreeMap<SourceKind, Politeness>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CurateSection {
    detections: Option<PathBuf>,
    #[serde(flatten)]
    thresholds: CurationConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DatasetSection {
    per_class: Option<usize>,
    strict: bool,
    test_fraction: f64,
    seed: Option<u64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            per_class: None,
            strict: true,
            test_fraction: 0.1,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractMode {
    /// Read a feature store produced elsewhere from `paths.features`.
    External,
    /// Generate class-conditional Gaussian features in-process.
    Synthetic,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExtractSection {
    mode: ExtractMode,
    dim: usize,
    backbone: String,
    separation: f64,
    noise: f64,
    seed: Option<u64>,
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection {
            mode: ExtractMode::External,
            dim: 16,
            backbone: "synthetic-gaussian".into(),
            separation: 6.0,
            noise: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSection {
    format: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { format: "text".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSettings {
    pub per_class: u64,
    pub source_mix: SourceMix,
    pub local_folder: Option<PathBuf>,
    pub result_lists: BTreeMap<SourceKind, PathBuf>,
    pub timeout_ms: u64,
    pub politeness: BTreeMap<SourceKind, Politeness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurateSettings {
    pub detections: PathBuf,
    pub thresholds: CurationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSettings {
    pub per_class: usize,
    pub strict: bool,
    pub test_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractSettings {
    pub mode: ExtractMode,
    pub dim: usize,
    pub backbone: String,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub workspace: PathBuf,
    /// `None` selects the bundled registry.
    pub registry: Option<PathBuf>,
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub head: PathBuf,
    pub ingest: IngestSettings,
    pub curate: CurateSettings,
    pub dataset: DatasetSettings,
    pub extract: ExtractSettings,
    pub train: TrainConfig,
    #[serde(skip)]
    pub eval_format: ReportFormat,
}

/// Apply one `section.key=value` override. The value is parsed as a TOML
/// value when possible and taken as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!(
            "override key {key:?} must look like section.key"
        )));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key:?}: {part} is not a section")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn section<T: DeserializeOwned + Default>(table: &toml::Table, name: &str, problems: &mut Vec<String>) -> T {
    match table.get(name) {
        None => T::default(),
        Some(toml::Value::Table(t)) => match toml::Value::Table(t.clone()).try_into::<T>() {
            Ok(v) => v,
            Err(e) => {
                problems.push(format!("[{name}]: {}", e.to_string().trim()));
                T::default()
            }
        },
        Some(_) => {
            problems.push(format!("{name} must be a section"));
            T::default()
        }
    }
}

/// Resolve `.` and `..` without touching the file system.
pub fn normalize_path(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    normalize_path(&base.join(p))
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        Self::from_toml(&text, base, overrides)
    }

    /// Parse and validate. Relative input paths resolve against `base`
    /// (normally the config file's directory); output paths resolve against
    /// the workspace and may not leave it. Every problem found is reported
    /// in one [`Error::Config`].
    pub fn from_toml(text: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("config is not valid TOML: {}", e.to_string().trim())))?;
        let mut problems = Vec::new();
        for o in overrides {
            if let Err(Error::Config(p)) = apply_override(&mut table, o) {
                problems.extend(p);
            }
        }
        for key in table.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                problems.push(format!("unknown section [{key}]"));
            }
        }
        let paths: PathsSection = section(&table, "paths", &mut problems);
        let ingest: IngestSection = section(&table, "ingest", &mut problems);
        let curate: CurateSection = section(&table, "curate", &mut problems);
        let dataset: DatasetSection = section(&table, "dataset", &mut problems);
        let extract: ExtractSection = section(&table, "extract", &mut problems);
        let train: TrainConfig = section(&table, "train", &mut problems);
        let eval: EvalSection = section(&table, "eval", &mut problems);

        let workspace = resolve(base, &paths.workspace);
        let output = |name: &str, p: &Path, problems: &mut Vec<String>| {
            let resolved = resolve(&workspace, p);
            if !resolved.starts_with(&workspace) {
                problems.push(format!(
                    "paths.{name} = {} lies outside the workspace {}",
                    p.display(),
                    workspace.display()
                ));
            }
            resolved
        };
        let manifest = output("manifest", &paths.manifest, &mut problems);
        let head = output("head", &paths.head, &mut problems);
        let features = match extract.mode {
            ExtractMode::Synthetic => output("features", &paths.features, &mut problems),
            ExtractMode::External => resolve(&workspace, &paths.features),
        };

        let input = |name: &str, p: &Path, problems: &mut Vec<String>| {
            let resolved = resolve(base, p);
            if !resolved.exists() {
                problems.push(format!("{name} {} does not exist", resolved.display()));
            }
            resolved
        };
        let registry = paths.registry.as_ref().map(|p| input("paths.registry", p, &mut problems));

        let per_class = ingest.per_class.unwrap_or_else(|| {
            problems.push("ingest.per_class is required".into());
            0
        });
        if ingest.sources.is_empty() {
            problems.push("ingest.sources is required (fractions per source kind, summing to 1)".into());
        }
        let source_mix = SourceMix(ingest.sources.clone());
        if !ingest.sources.is_empty() {
            if let Err(e) = source_mix.validate() {
                problems.push(format!("ingest.sources: {e}"));
            }
        }
        let local_folder = ingest.local_folder.as_ref().map(|p| input("ingest.local_folder", p, &mut problems));
        let mut result_lists = BTreeMap::new();
        for (kind, p) in &ingest.result_lists {
            result_lists.insert(*kind, input(&format!("ingest.result_lists.{kind}"), p, &mut problems));
        }
        for (kind, frac) in &ingest.sources {
            if *frac <= 0.0 {
                continue;
            }
            match kind {
                SourceKind::LocalFolder if local_folder.is_none() => {
                    problems.push("ingest.local_folder is required for the local-folder source".into())
                }
                SourceKind::SearchEngine | SourceKind::CadRender if !result_lists.contains_key(kind) => {
                    problems.push(format!("ingest.result_lists.{kind} is required for the {kind} source"))
                }
                _ => {}
            }
        }

        let detections = match &curate.detections {
            Some(p) => input("curate.detections", p, &mut problems),
            None => {
                problems.push("curate.detections is required (detection sidecar file or directory)".into());
                PathBuf::new()
            }
        };
        let t = &curate.thresholds;
        if !(0.0..=1.0).contains(&t.confidence_floor) {
            problems.push(format!("curate.confidence_floor must be in [0,1], got {}", t.confidence_floor));
        }
        if t.vehicle_labels.is_empty() {
            problems.push("curate.vehicle_labels must not be empty".into());
        }

        let dataset_per_class = dataset.per_class.unwrap_or_else(|| {
            problems.push("dataset.per_class is required".into());
            0
        });
        if dataset.per_class == Some(0) {
            problems.push("dataset.per_class must be positive".into());
        }
        if !(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0) {
            problems.push(format!("dataset.test_fraction must be in (0,1), got {}", dataset.test_fraction));
        }
        let dataset_seed = dataset.seed.unwrap_or_else(|| {
            problems.push("dataset.seed is required".into());
            0
        });

        let extract_seed = match (extract.mode, extract.seed) {
            (_, Some(s)) => s,
            (ExtractMode::Synthetic, None) => {
                problems.push("extract.seed is required for synthetic features".into());
                0
            }
            (ExtractMode::External, None) => 0,
        };
        if extract.mode == ExtractMode::Synthetic {
            if extract.dim == 0 {
                problems.push("extract.dim must be positive".into());
            }
            if !(extract.noise > 0.0 && extract.noise.is_finite()) {
                problems.push(format!("extract.noise must be positive, got {}", extract.noise));
            }
        }

        let train_seed_given = table
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("seed"));
        if !train_seed_given {
            problems.push("train.seed is required".into());
        }
        if let Err(Error::Config(p)) = train.validate() {
            problems.extend(p.into_iter().map(|m| format!("train: {m}")));
        }

        let eval_format = eval.format.parse().unwrap_or_else(|e: Error| {
            problems.push(format!("eval.format: {e}"));
            ReportFormat::Text
        });

        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(PipelineConfig {
            workspace,
            registry,
            manifest,
            features,
            head,
            ingest: IngestSettings {
                per_class,
                source_mix,
                local_folder,
                result_lists,
                timeout_ms: ingest.timeout_ms.unwrap_or(30_000),
                politeness: ingest.politeness,
            },
            curate: CurateSettings {
                detections,
                thresholds: curate.thresholds,
            },
            dataset: DatasetSettings {
                per_class: dataset_per_class,
                strict: dataset.strict,
                test_fraction: dataset.test_fraction,
                seed: dataset_seed,
            },
            extract: ExtractSettings {
                mode: extract.mode,
                dim: extract.dim,
                backbone: extract.backbone,
                separation: extract.separation,
                noise: extract.noise,
                seed: extract_seed,
            },
            train,
            eval_format,
        })
    }

    /// Politeness for a source: the configured value, or the default
    /// (unthrottled for local folders).
    pub fn politeness_for(&self, kind: SourceKind) -> Politeness {
        self.ingest.politeness.get(&kind).cloned().unwrap_or_else(|| match kind {
            SourceKind::LocalFolder => Politeness::unthrottled(),
            _ => Politeness::default(),
        })
    }
}
