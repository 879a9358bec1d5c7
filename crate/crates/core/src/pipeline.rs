//! Stage orchestrator behind `fleet-census run`.
//!
//! Stages run in a fixed order. Before a stage runs, the digest of its
//! inputs (file contents plus its config section) is compared with the stamp
//! left by the previous run; a match with all outputs present means the stage
//! is reported as up to date and skipped.
//!
//! Workspace layout:
//!
//! ```text
//! plan/plan.jsonl
//! raw/manifest.jsonl, raw/<class>/...
//! curated/crops.jsonl, curated/outcomes.jsonl, curated/<class>/...
//! <manifest>, balanced.jsonl and splits.jsonl next to it
//! <features>, <head>
//! eval/report.{txt,csv,json}
//! reports/<stage>.jsonl, reports/run.jsonl, reports/error.jsonl
//! reports/stamps/<stage>.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExtractMode, PipelineConfig};
use crate::curation::{curate_run, SidecarDetector, CURATED_MANIFEST, OUTCOMES_FILE};
use crate::dataset::{balance, split, BalancedView, DatasetManifest, ManifestEntry, ManifestWriter, Split};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, render_report, ReportFormat};
use crate::hash::ContentHash;
use crate::ingest::{
    build_query_plan, ingest_run, HttpListSource, ImageSource, LocalFolderSource, PlanRequest, QueryPlan,
    SourceKind, RAW_MANIFEST,
};
use crate::learner::{load_checkpoint, save_checkpoint, train_head, Checkpoint, FeatureStore};
use crate::rng::SplitMix64;
use crate::taxonomy::{bundled_registry, classify_physical, Registry, VehicleClass, BUNDLED_REGISTRY_TSV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_STAGE_FAILURE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Taxonomy,
    Plan,
    Ingest,
    Curate,
    Balance,
    Split,
    Extract,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Taxonomy,
        Stage::Plan,
        Stage::Ingest,
        Stage::Curate,
        Stage::Balance,
        Stage::Split,
        Stage::Extract,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Taxonomy => "taxonomy",
            Stage::Plan => "plan",
            Stage::Ingest => "ingest",
            Stage::Curate => "curate",
            Stage::Balance => "balance",
            Stage::Split => "split",
            Stage::Extract => "extract",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown stage {s:?}")))
    }
}

/// Parse `a,b,c` into stages in execution order, all unknown names reported together.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut stages = Vec::new();
    let mut problems = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.parse::<Stage>() {
            Ok(s) => stages.push(s),
            Err(Error::Config(p)) => problems.extend(p),
            Err(e) => problems.push(e.to_string()),
        }
    }
    if stages.is_empty() && problems.is_empty() {
        problems.push("no stages given".into());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    stages.sort();
    stages.dedup();
    Ok(stages)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    pub input_digest: String,
    pub outputs: Vec<String>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub stage: Option<Stage>,
    pub kind: String,
    pub message: String,
    pub problems: Vec<String>,
    pub exit_code: i32,
}

impl ErrorReport {
    pub fn from_error(stage: Option<Stage>, err: &Error) -> Self {
        ErrorReport {
            stage,
            kind: err.kind().into(),
            message: err.to_string(),
            problems: match err {
                Error::Config(p) => p.clone(),
                _ => Vec::new(),
            },
            exit_code: exit_code(err),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub stages: Vec<StageReport>,
    pub error: Option<ErrorReport>,
}

impl RunOutcome {
    pub fn all_up_to_date(&self) -> bool {
        self.exit_code == EXIT_OK && self.stages.iter().all(|s| s.status == StageStatus::UpToDate)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    stage: Stage,
    input_digest: String,
    summary: Value,
}

/// Resolved artifact locations for one config.
#[derive(Debug, Clone)]
pub struct Layout {
    pub workspace: PathBuf,
    pub plan: PathBuf,
    pub raw_manifest: PathBuf,
    pub crops: PathBuf,
    pub outcomes: PathBuf,
    pub manifest: PathBuf,
    pub balanced: PathBuf,
    pub splits: PathBuf,
    pub features: PathBuf,
    pub head: PathBuf,
    pub eval_dir: PathBuf,
    pub reports: PathBuf,
}

impl Layout {
    pub fn new(config: &PipelineConfig) -> Self {
        let w = &config.workspace;
        let dataset_dir = config.manifest.parent().unwrap_or(w).to_path_buf();
        Layout {
            workspace: w.clone(),
            plan: w.join("plan/plan.jsonl"),
            raw_manifest: w.join(RAW_MANIFEST),
            crops: w.join(CURATED_MANIFEST),
            outcomes: w.join(OUTCOMES_FILE),
            manifest: config.manifest.clone(),
            balanced: dataset_dir.join("balanced.jsonl"),
            splits: dataset_dir.join("splits.jsonl"),
            features: config.features.clone(),
            head: config.head.clone(),
            eval_dir: w.join("eval"),
            reports: w.join("reports"),
        }
    }

    pub fn report(&self, stage: Stage) -> PathBuf {
        self.reports.join(format!("{stage}.jsonl"))
    }

    fn stamp(&self, stage: Stage) -> PathBuf {
        self.reports.join("stamps").join(format!("{stage}.json"))
    }

    pub fn eval_report(&self, format: ReportFormat) -> PathBuf {
        self.eval_dir.join(match format {
            ReportFormat::Text => "report.txt",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Json => "report.json",
        })
    }
}

/// Accumulates the digest of a stage's inputs.
struct InputDigest {
    hasher: Sha256,
    stage: Stage,
}

impl InputDigest {
    fn new(stage: Stage) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(stage.as_str().as_bytes());
        InputDigest { hasher, stage }
    }

    fn field(&mut self, name: &str, bytes: &[u8]) {
        self.hasher.update((name.len() as u64).to_le_bytes());
        self.hasher.update(name.as_bytes());
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }

    fn settings<T: Serialize>(&mut self, name: &str, value: &T) {
        let json = serde_json::to_vec(value).expect("settings serialize");
        self.field(name, &json);
    }

    fn path(&mut self, name: &str, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "stage {} needs {}, which does not exist",
                self.stage,
                path.display()
            )));
        }
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        for (rel, full) in files {
            let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
            self.field(&format!("{name}/{rel}"), &bytes);
        }
        Ok(())
    }

    fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

fn collect_files(root: &Path, path: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    if path.is_dir() {
        let mut children: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .collect();
        children.sort();
        for c in children {
            collect_files(root, &c, out)?;
        }
    } else {
        let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned();
        out.push((rel, path.to_path_buf()));
    }
    Ok(())
}

/// Digest of the manifest's membership (hash, class, quarantine flag),
/// ignoring split labels so that assigning splits does not invalidate balancing.
fn manifest_membership(d: &mut InputDigest, manifest_path: &Path) -> Result<DatasetManifest> {
    if !manifest_path.exists() {
        return Err(Error::Dependency(format!(
            "stage {} needs {}, which does not exist",
            d.stage,
            manifest_path.display()
        )));
    }
    let manifest = DatasetManifest::load(manifest_path)?;
    let mut members: Vec<(ContentHash, VehicleClass, bool)> = manifest
        .entries()
        .iter()
        .map(|e| (e.content_hash, e.vehicle_class, e.quarantined))
        .collect();
    members.sort();
    d.settings("manifest-membership", &members);
    Ok(manifest)
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    content_hash: ContentHash,
    split: Split,
}

fn load_splits(path: &Path) -> Result<BTreeMap<ContentHash, Split>> {
    let lines: Vec<SplitLine> = crate::jsonl::read(path)?;
    Ok(lines.into_iter().map(|l| (l.content_hash, l.split)).collect())
}

fn load_registry(config: &PipelineConfig) -> Result<Registry> {
    match &config.registry {
        Some(p) => Registry::load(p),
        None => Ok(bundled_registry()),
    }
}

fn registry_input(d: &mut InputDigest, config: &PipelineConfig) -> Result<()> {
    match &config.registry {
        Some(p) => d.path("registry", p),
        None => {
            d.field("registry", BUNDLED_REGISTRY_TSV.as_bytes());
            Ok(())
        }
    }
}

/// Class-conditional Gaussian features: the mean of class `c` is
/// `separation` along axis `c`, with isotropic noise. Each row draws from a
/// stream derived from its content hash, so a row does not depend on which
/// other entries exist.
pub fn synthetic_features(
    entries: &[ManifestEntry],
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
    backbone: &str,
) -> Result<FeatureStore> {
    if dim < VehicleClass::COUNT {
        return Err(Error::config(format!(
            "synthetic features need dim >= {}, got {dim}",
            VehicleClass::COUNT
        )));
    }
    let mut store = FeatureStore::new(backbone, dim);
    for e in entries.iter().filter(|e| !e.quarantined) {
        let mut rng = SplitMix64::derive(seed, &format!("extract/{}", e.content_hash));
        let mut values: Vec<f32> = (0..dim).map(|_| (noise * rng.normal()) as f32).collect();
        values[e.vehicle_class.index()] += separation as f32;
        store.push(e.content_hash, e.vehicle_class, values)?;
    }
    store.canonicalize();
    Ok(store)
}

struct StagePlan {
    digest: String,
    outputs: Vec<PathBuf>,
}

type StageBody<'a> = Box<dyn FnOnce() -> Result<Value> + 'a>;

fn prepare<'a>(stage: Stage, config: &'a PipelineConfig, layout: &'a Layout) -> Result<(StagePlan, StageBody<'a>)> {
    let mut d = InputDigest::new(stage);
    let report_path = layout.report(stage);
    let (outputs, body): (Vec<PathBuf>, StageBody<'a>) = match stage {
        Stage::Taxonomy => {
            registry_input(&mut d, config)?;
            let body = Box::new(move || {
                let registry = load_registry(config)?;
                let mut lines = Vec::new();
                for (class, n) in registry.class_counts() {
                    lines.push(json!({"kind": "class-count", "vehicle_class": class, "models": n}));
                }
                let mut warnings = 0;
                for e in registry.entries() {
                    if let Some(spec) = &e.spec {
                        let c = classify_physical(spec)?;
                        if c.warning {
                            warnings += 1;
                            lines.push(json!({
                                "kind": "warning", "make": e.make, "model": e.model,
                                "message": format!("{} t / {} m is a boundary case for {}", spec.gvm_tons, spec.height_m, c.class),
                            }));
                        }
                    }
                }
                crate::jsonl::write_atomic(&report_path, &lines)?;
                Ok(json!({"models": registry.len(), "warnings": warnings}))
            }) as StageBody;
            (vec![], body)
        }
        Stage::Plan => {
            registry_input(&mut d, config)?;
            d.settings("per_class", &config.ingest.per_class);
            d.settings("source_mix", &config.ingest.source_mix);
            let body = Box::new(move || {
                let registry = load_registry(config)?;
                let request = PlanRequest::new(config.ingest.per_class, config.ingest.source_mix.clone());
                let plan = build_query_plan(&registry, &request)?;
                plan.save(&layout.plan)?;
                let totals = plan.class_totals();
                let lines: Vec<Value> = totals
                    .iter()
                    .map(|(c, n)| json!({"kind": "class-target", "vehicle_class": c, "target": n}))
                    .collect();
                crate::jsonl::write_atomic(&report_path, &lines)?;
                Ok(json!({"entries": plan.entries.len(), "targets": totals}))
            }) as StageBody;
            (vec![layout.plan.clone()], body)
        }
        Stage::Ingest => {
            d.path("plan", &layout.plan)?;
            if let Some(p) = &config.ingest.local_folder {
                d.path("local-folder", p)?;
            }
            for (kind, p) in &config.ingest.result_lists {
                d.path(&format!("results/{kind}"), p)?;
            }
            d.settings("politeness", &config.ingest.politeness);
            let body = Box::new(move || {
                let plan = QueryPlan::load(&layout.plan)?;
                let mut adapters: HashMap<SourceKind, Arc<dyn ImageSource>> = HashMap::new();
                if let Some(p) = &config.ingest.local_folder {
                    adapters.insert(SourceKind::LocalFolder, Arc::new(LocalFolderSource::new(p)));
                }
                let timeout = Duration::from_millis(config.ingest.timeout_ms);
                for (kind, p) in &config.ingest.result_lists {
                    adapters.insert(*kind, Arc::new(HttpListSource::from_file(*kind, p, timeout)?));
                }
                let politeness = SourceKind::ALL.iter().map(|&k| (k, config.politeness_for(k))).collect();
                let report = ingest_run(&plan, &adapters, &politeness, &layout.workspace)?;
                report.save(&report_path)?;
                Ok(json!({
                    "new_records": report.new_records(),
                    "total_records": report.total_records(),
                    "failures": report.failures().count(),
                }))
            }) as StageBody;
            (vec![layout.raw_manifest.clone()], body)
        }
        Stage::Curate => {
            d.path("raw-manifest", &layout.raw_manifest)?;
            d.path("detections", &config.curate.detections)?;
            d.settings("thresholds", &config.curate.thresholds);
            let body = Box::new(move || {
                let detector = SidecarDetector::load(&config.curate.detections)?;
                for w in detector.warnings() {
                    log::warn!("{w}");
                }
                let report = curate_run(&layout.workspace, &detector, &config.curate.thresholds, &layout.workspace)?;
                report.save(&report_path)?;
                let crops: Vec<crate::curation::CropRecord> = crate::jsonl::read(&layout.crops)?;
                let mut writer = ManifestWriter::open(&layout.manifest)?;
                let added = writer.append_missing(crops.iter().map(ManifestEntry::from_crop))?;
                Ok(json!({
                    "inputs": report.inputs,
                    "accepted_images": report.accepted_images(),
                    "crops_kept": report.crops_kept,
                    "manifest_added": added,
                    "manifest_size": writer.manifest().len(),
                }))
            }) as StageBody;
            (
                vec![layout.crops.clone(), layout.outcomes.clone(), layout.manifest.clone()],
                body,
            )
        }
        Stage::Balance => {
            manifest_membership(&mut d, &layout.manifest)?;
            d.settings("per_class", &config.dataset.per_class);
            d.settings("strict", &config.dataset.strict);
            d.settings("seed", &config.dataset.seed);
            let body = Box::new(move || {
                let manifest = DatasetManifest::load(&layout.manifest)?;
                let outcome = balance(&manifest, config.dataset.per_class, config.dataset.seed, config.dataset.strict)?;
                outcome.view.save(&layout.balanced)?;
                let mut lines: Vec<Value> = outcome
                    .view
                    .class_sizes()
                    .iter()
                    .map(|(c, n)| json!({"kind": "class-size", "vehicle_class": c, "size": n}))
                    .collect();
                for (c, n) in &outcome.shortfalls {
                    lines.push(json!({
                        "kind": "shortfall", "vehicle_class": c, "available": n,
                        "requested": config.dataset.per_class, "common_size": outcome.common_size,
                    }));
                }
                crate::jsonl::write_atomic(&report_path, &lines)?;
                Ok(json!({"size": outcome.view.len(), "common_size": outcome.common_size, "shortfalls": outcome.shortfalls.len()}))
            }) as StageBody;
            (vec![layout.balanced.clone()], body)
        }
        Stage::Split => {
            d.path("balanced", &layout.balanced)?;
            d.settings("test_fraction", &config.dataset.test_fraction);
            d.settings("seed", &config.dataset.seed);
            let body = Box::new(move || {
                let view = BalancedView::load(&layout.balanced)?;
                let assignment = split(&view, config.dataset.test_fraction, config.dataset.seed)?;
                let mut writer = ManifestWriter::open(&layout.manifest)?;
                writer.assign_splits(&assignment.labels)?;
                let lines: Vec<SplitLine> = assignment
                    .labels
                    .iter()
                    .map(|(h, s)| SplitLine { content_hash: *h, split: *s })
                    .collect();
                crate::jsonl::write_atomic(&layout.splits, &lines)?;
                let mut report = Vec::new();
                for (class, members) in &view.by_class {
                    let test = members.iter().filter(|h| assignment.labels[*h] == Split::Test).count();
                    report.push(json!({"kind": "class-split", "vehicle_class": class, "train": members.len() - test, "test": test}));
                }
                crate::jsonl::write_atomic(&report_path, &report)?;
                Ok(json!({"train": assignment.count(Split::Train), "test": assignment.count(Split::Test)}))
            }) as StageBody;
            (vec![layout.splits.clone()], body)
        }
        Stage::Extract => {
            d.path("splits", &layout.splits)?;
            match config.extract.mode {
                ExtractMode::Synthetic => {
                    manifest_membership(&mut d, &layout.manifest)?;
                    d.settings("extract", &config.extract);
                }
                ExtractMode::External => d.path("features", &layout.features)?,
            }
            let body = Box::new(move || {
                if config.extract.mode == ExtractMode::Synthetic {
                    let manifest = DatasetManifest::load(&layout.manifest)?;
                    let e = &config.extract;
                    let store = synthetic_features(manifest.entries(), e.dim, e.separation, e.noise, e.seed, &e.backbone)?;
                    store.save(&layout.features)?;
                }
                let summary = FeatureStore::check_file(&layout.features)?;
                let store = FeatureStore::load(&layout.features)?;
                let splits = load_splits(&layout.splits)?;
                let missing: Vec<String> = splits
                    .keys()
                    .filter(|h| store.row(h).is_none())
                    .map(|h| h.to_hex())
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::Dependency(format!(
                        "feature store {} lacks rows for {} split entries: {}",
                        layout.features.display(),
                        missing.len(),
                        missing.join(", ")
                    )));
                }
                let line = json!({
                    "kind": "feature-store", "backbone": summary.backbone, "dim": summary.dim,
                    "rows": summary.rows, "warnings": summary.warnings,
                });
                crate::jsonl::write_atomic(&report_path, std::slice::from_ref(&line))?;
                Ok(line)
            }) as StageBody;
            (vec![layout.features.clone()], body)
        }
        Stage::Train => {
            d.path("features", &layout.features)?;
            d.path("splits", &layout.splits)?;
            d.settings("train", &config.train);
            let body = Box::new(move || {
                let store = FeatureStore::load(&layout.features)?;
                let splits = load_splits(&layout.splits)?;
                let (head, log) = train_head(&store, &splits, &config.train)?;
                save_checkpoint(
                    &layout.head,
                    &Checkpoint {
                        head,
                        config: config.train.clone(),
                        backbone: store.backbone.clone(),
                    },
                )?;
                crate::jsonl::write_atomic(&report_path, &log.epochs)?;
                let last = log.epochs.last().expect("at least one epoch");
                Ok(json!({"examples": log.examples, "final_loss": last.loss, "final_accuracy": last.accuracy}))
            }) as StageBody;
            (vec![layout.head.clone()], body)
        }
        Stage::Eval => {
            d.path("head", &layout.head)?;
            d.path("features", &layout.features)?;
            d.path("splits", &layout.splits)?;
            d.field("format", format!("{:?}", config.eval_format).as_bytes());
            let out = layout.eval_report(config.eval_format);
            let body = Box::new(move || {
                let checkpoint = load_checkpoint(&layout.head)?;
                let store = FeatureStore::load(&layout.features)?;
                if checkpoint.backbone != store.backbone {
                    return Err(Error::Evaluation(format!(
                        "head was trained on backbone {:?} but the feature store is {:?}",
                        checkpoint.backbone, store.backbone
                    )));
                }
                let splits = load_splits(&layout.splits)?;
                let report = evaluate(&checkpoint.head, &store, &splits)?;
                crate::jsonl::write_bytes_atomic(&out, render_report(&report, config.eval_format).as_bytes())?;
                crate::jsonl::write_atomic(&report_path, &[&report])?;
                Ok(json!({"test_size": report.test_size, "accuracy": report.accuracy}))
            }) as StageBody;
            (vec![layout.eval_report(config.eval_format)], body)
        }
    };
    let mut outputs = outputs;
    outputs.push(layout.report(stage));
    Ok((
        StagePlan {
            digest: d.finish(),
            outputs,
        },
        body,
    ))
}

fn run_stage(stage: Stage, config: &PipelineConfig, layout: &Layout) -> Result<StageReport> {
    let (plan, body) = prepare(stage, config, layout)?;
    let stamp_path = layout.stamp(stage);
    let rel = |p: &PathBuf| {
        p.strip_prefix(&layout.workspace)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let outputs: Vec<String> = plan.outputs.iter().map(rel).collect();
    if let Ok(text) = std::fs::read_to_string(&stamp_path) {
        if let Ok(stamp) = serde_json::from_str::<Stamp>(&text) {
            if stamp.input_digest == plan.digest && plan.outputs.iter().all(|p| p.exists()) {
                return Ok(StageReport {
                    stage,
                    status: StageStatus::UpToDate,
                    input_digest: plan.digest,
                    outputs,
                    summary: stamp.summary,
                });
            }
        }
    }
    // A stale stamp must not survive a failed rerun.
    let _ = std::fs::remove_file(&stamp_path);
    log::info!("running stage {stage}");
    let summary = body()?;
    let stamp = Stamp {
        stage,
        input_digest: plan.digest.clone(),
        summary: summary.clone(),
    };
    crate::jsonl::write_bytes_atomic(&stamp_path, serde_json::to_string_pretty(&stamp).expect("stamp").as_bytes())?;
    Ok(StageReport {
        stage,
        status: StageStatus::Ran,
        input_digest: plan.digest,
        outputs,
        summary,
    })
}

/// Run `stages` (all when `None`) in pipeline order. Each stage's report is
/// written before the next stage starts; the first failure stops the run and
/// is written to `reports/error.jsonl`.
pub fn run_pipeline(config: &PipelineConfig, stages: Option<&[Stage]>) -> RunOutcome {
    let layout = Layout::new(config);
    let mut selected: Vec<Stage> = stages.map(<[Stage]>::to_vec).unwrap_or_else(|| Stage::ALL.to_vec());
    selected.sort();
    selected.dedup();
    let run_log = layout.reports.join("run.jsonl");
    let error_log = layout.reports.join("error.jsonl");
    let _ = std::fs::remove_file(&error_log);
    let mut reports = Vec::new();
    for stage in selected {
        match run_stage(stage, config, &layout) {
            Ok(r) => {
                log::info!("stage {stage}: {:?}", r.status);
                reports.push(r);
                if let Err(e) = crate::jsonl::write_atomic(&run_log, &reports) {
                    return failure(Some(stage), &e, reports, &error_log);
                }
            }
            Err(e) => return failure(Some(stage), &e, reports, &error_log),
        }
    }
    RunOutcome {
        exit_code: EXIT_OK,
        stages: reports,
        error: None,
    }
}

fn failure(stage: Option<Stage>, err: &Error, stages: Vec<StageReport>, error_log: &Path) -> RunOutcome {
    let report = ErrorReport::from_error(stage, err);
    if let Err(e) = crate::jsonl::write_atomic(error_log, &[&report]) {
        log::error!("could not write error report: {e}");
    }
    RunOutcome {
        exit_code: report.exit_code,
        stages,
        error: Some(report),
    }
}
