use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use fleet_census::config::PipelineConfig;
use fleet_census::curation::{curate_run, CropRecord, CurationConfig, SidecarDetector, CURATED_MANIFEST};
use fleet_census::dataset::{balance, split, stats, BalancedView, DatasetManifest, ManifestEntry, ManifestWriter};
use fleet_census::evaluation::{evaluate, render_report, ReportFormat};
use fleet_census::fixtures::{generate, FixtureSpec};
use fleet_census::ingest::{
    build_query_plan, ingest_run, HttpListSource, ImageSource, LocalFolderSource, PlanRequest, Politeness,
    QueryPlan, SourceKind, SourceMix,
};
use fleet_census::learner::{load_checkpoint, save_checkpoint, train_head, Checkpoint, FeatureStore, TrainConfig};
use fleet_census::pipeline::{exit_code, parse_stages, run_pipeline, ErrorReport, EXIT_OK};
use fleet_census::taxonomy::{bundled_registry, classify_physical, PhysicalSpec, Registry};
use fleet_census::{ContentHash, Error, Result};

#[derive(Parser)]
#[command(name = "fleet-census", version, about = "Build a balanced logistic-vehicle image dataset and train a classifier head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Vehicle classes and the make/model registry
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Query planning and raw image fetching
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Validation, detection cropping and deduplication
    #[command(subcommand)]
    Curate(CurateCmd),
    /// Manifest balancing, splitting and statistics
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Classifier head training and prediction
    #[command(subcommand)]
    Learn(LearnCmd),
    /// Test-split evaluation
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Check detection sidecars and feature stores written by external tools
    #[command(subcommand)]
    Check(CheckCmd),
    /// Run pipeline stages from a config file
    #[command(version)]
    Run(RunArgs),
    /// Write the offline fixture corpus (images, sidecar, registry, config)
    #[command(version)]
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct RegistryArg {
    /// Registry TSV; the bundled registry when omitted
    #[arg(long)]
    registry: Option<PathBuf>,
}

impl RegistryArg {
    fn load(&self) -> Result<Registry> {
        match &self.registry {
            Some(p) => Registry::load(p),
            None => Ok(bundled_registry()),
        }
    }
}

#[derive(Subcommand)]
#[command(version)]
enum TaxonomyCmd {
    /// Parse and check a registry, printing models per class
    #[command(version)]
    Validate(RegistryArg),
    /// Classify by gross vehicle mass (tonnes) and height (metres)
    #[command(version)]
    Classify {
        #[arg(long)]
        gvm: f64,
        #[arg(long)]
        height: f64,
    },
    /// Look up the class of a registered make and model
    #[command(version)]
    Lookup {
        #[command(flatten)]
        registry: RegistryArg,
        #[arg(long)]
        make: String,
        #[arg(long)]
        model: String,
    },
}

#[derive(Subcommand)]
#[command(version)]
enum IngestCmd {
    /// Write a query plan spreading per-class targets over models and sources
    #[command(version)]
    Plan {
        #[command(flatten)]
        registry: RegistryArg,
        #[arg(long)]
        per_class: u64,
        /// Source fractions, e.g. `search-engine=0.7,cad-render=0.3`
        #[arg(long, default_value = "local-folder=1")]
        sources: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fetch raw images for a plan
    #[command(version)]
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Output root; raw images land under `<out>/raw/`
        #[arg(long)]
        out: PathBuf,
        /// Root of `<make-model>/` image folders for the local-folder source
        #[arg(long)]
        local_folder: Option<PathBuf>,
        /// Result list for an HTTP source, e.g. `search-engine=results.jsonl`
        #[arg(long = "results")]
        results: Vec<String>,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
        /// Ingest report path (JSON lines); stdout summary only when omitted
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
#[command(version)]
enum CurateCmd {
    /// Validate, crop and deduplicate ingested images
    #[command(version)]
    Run {
        /// Ingest output root (holds raw/manifest.jsonl)
        #[arg(long)]
        ingest: PathBuf,
        /// Detection sidecar file or directory of sidecars
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset manifest to add accepted crops to
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        confidence_floor: Option<f64>,
        #[arg(long)]
        min_crop_side: Option<u32>,
        #[arg(long)]
        dedup_max_hamming: Option<u32>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Mark a manifest entry as quarantined (or release it)
    #[command(version)]
    Quarantine {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        hash: ContentHash,
        #[arg(long)]
        release: bool,
    },
}

#[derive(Subcommand)]
#[command(version)]
enum DatasetCmd {
    /// Sample an equal number of entries per class
    #[command(version)]
    Balance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        seed: u64,
        /// Cut every class to the smallest available size
        #[arg(long)]
        strict: bool,
        /// Balanced view; `balanced.jsonl` next to the manifest by default
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified train/test split of the balanced view, written to the manifest
    #[command(version)]
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        balanced: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Counts per class, source and split
    #[command(version)]
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Rewrite the manifest log as one line per entry
    #[command(version)]
    Compact {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Subcommand)]
#[command(version)]
enum LearnCmd {
    /// Train a head on the train split
    #[command(version)]
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: u32,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        learning_rate: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        weight_decay: f64,
        /// Hidden layer widths, comma separated; none by default
        #[arg(long, value_delimiter = ',')]
        hidden: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch log (JSON lines)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict every row of a feature store (JSON lines on stdout)
    #[command(version)]
    Predict {
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
}

#[derive(Subcommand)]
#[command(version)]
enum EvalCmd {
    /// Evaluate a head on the test split
    #[command(version)]
    Run {
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
        /// Output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
#[command(version)]
enum CheckCmd {
    /// Validate a detection sidecar file or directory
    #[command(version)]
    Detections { path: PathBuf },
    /// Validate a feature store file
    #[command(version)]
    Features { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated subset of stages; all stages when omitted
    #[arg(long)]
    stages: Option<String>,
    /// Override a config key, e.g. `--set train.epochs=20` (repeatable)
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = FixtureSpec::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = FixtureSpec::default().images_per_model)]
    images_per_model: usize,
}

fn parse_source_mix(s: &str) -> Result<SourceMix> {
    let mut mix = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::config(format!("source fraction {part:?} is not kind=fraction")))?;
        let frac: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("fraction {v:?} is not a number")))?;
        mix.insert(k.parse::<SourceKind>()?, frac);
    }
    let mix = SourceMix(mix);
    mix.validate()?;
    Ok(mix)
}

fn print_json_lines<T: serde::Serialize>(items: &[T]) {
    for i in items {
        println!("{}", serde_json::to_string(i).expect("serializable"));
    }
}

fn default_beside(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(name)
}

fn taxonomy(cmd: TaxonomyCmd) -> Result<()> {
    match cmd {
        TaxonomyCmd::Validate(reg) => {
            let registry = reg.load()?;
            for (class, n) in registry.class_counts() {
                println!("{class}\t{n}");
            }
            println!("{} models", registry.len());
        }
        TaxonomyCmd::Classify { gvm, height } => {
            let c = classify_physical(&PhysicalSpec::new(gvm, height)?)?;
            println!("{}", c.class);
            if c.warning {
                eprintln!("warning: {gvm} t / {height} m is outside the usual height range for {}", c.class);
            }
        }
        TaxonomyCmd::Lookup { registry, make, model } => {
            println!("{}", registry.load()?.lookup_model(&make, &model)?);
        }
    }
    Ok(())
}

fn ingest(cmd: IngestCmd) -> Result<()> {
    match cmd {
        IngestCmd::Plan { registry, per_class, sources, out } => {
            let plan = build_query_plan(&registry.load()?, &PlanRequest::new(per_class, parse_source_mix(&sources)?))?;
            plan.save(&out)?;
            for (class, n) in plan.class_totals() {
                println!("{class}\t{n}");
            }
        }
        IngestCmd::Run { plan, out, local_folder, results, timeout_ms, report } => {
            let plan = QueryPlan::load(&plan)?;
            let mut adapters: HashMap<SourceKind, Arc<dyn ImageSource>> = HashMap::new();
            if let Some(root) = local_folder {
                adapters.insert(SourceKind::LocalFolder, Arc::new(LocalFolderSource::new(root)));
            }
            for r in &results {
                let (k, p) = r
                    .split_once('=')
                    .ok_or_else(|| Error::config(format!("--results {r:?} is not kind=path")))?;
                let kind: SourceKind = k.parse()?;
                adapters.insert(kind, Arc::new(HttpListSource::from_file(kind, p, Duration::from_millis(timeout_ms))?));
            }
            let politeness: BTreeMap<SourceKind, Politeness> = SourceKind::ALL
                .iter()
                .map(|&k| {
                    let p = if k == SourceKind::LocalFolder { Politeness::unthrottled() } else { Politeness::default() };
                    (k, p)
                })
                .collect();
            let rep = ingest_run(&plan, &adapters, &politeness, &out)?;
            if let Some(path) = report {
                rep.save(path)?;
            }
            println!(
                "{} new, {} total, {} failures",
                rep.new_records(),
                rep.total_records(),
                rep.failures().count()
            );
        }
    }
    Ok(())
}

fn curate(cmd: CurateCmd) -> Result<()> {
    match cmd {
        CurateCmd::Run {
            ingest,
            detections,
            out,
            manifest,
            confidence_floor,
            min_crop_side,
            dedup_max_hamming,
            report,
        } => {
            let mut cfg = CurationConfig::default();
            if let Some(v) = confidence_floor {
                cfg.confidence_floor = v;
            }
            if let Some(v) = min_crop_side {
                cfg.min_crop_side = v;
            }
            if let Some(v) = dedup_max_hamming {
                cfg.dedup_max_hamming = v;
            }
            let detector = SidecarDetector::load(&detections)?;
            for w in detector.warnings() {
                eprintln!("warning: {w}");
            }
            let rep = curate_run(&ingest, &detector, &cfg, &out)?;
            if let Some(path) = report {
                rep.save(path)?;
            } else {
                print_json_lines(&rep.lines());
            }
            if let Some(m) = manifest {
                let crops: Vec<CropRecord> = fleet_census::jsonl::read(out.join(CURATED_MANIFEST))?;
                let mut writer = ManifestWriter::open(&m)?;
                let added = writer.append_missing(crops.iter().map(ManifestEntry::from_crop))?;
                eprintln!("{added} entries added to {}", m.display());
            }
        }
        CurateCmd::Quarantine { manifest, hash, release } => {
            let mut writer = ManifestWriter::open(&manifest)?;
            let changed = writer.set_quarantined(&hash, !release)?;
            println!("{}", if changed { "updated" } else { "unchanged" });
        }
    }
    Ok(())
}

fn dataset(cmd: DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::Balance { manifest, per_class, seed, strict, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let outcome = balance(&m, per_class, seed, strict)?;
            let out = out.unwrap_or_else(|| default_beside(&manifest, "balanced.jsonl"));
            outcome.view.save(&out)?;
            for (class, n) in outcome.view.class_sizes() {
                println!("{class}\t{n}");
            }
            for (class, n) in &outcome.shortfalls {
                eprintln!(
                    "shortfall: {class} has {n} of {per_class}; --strict would select {} per class",
                    outcome.common_size
                );
            }
        }
        DatasetCmd::Split { manifest, balanced, test_fraction, seed } => {
            let balanced = balanced.unwrap_or_else(|| default_beside(&manifest, "balanced.jsonl"));
            let view = BalancedView::load(&balanced)?;
            let assignment = split(&view, test_fraction, seed)?;
            let mut writer = ManifestWriter::open(&manifest)?;
            let changed = writer.assign_splits(&assignment.labels)?;
            println!(
                "train {}, test {} ({changed} entries changed)",
                assignment.count(fleet_census::dataset::Split::Train),
                assignment.count(fleet_census::dataset::Split::Test)
            );
        }
        DatasetCmd::Stats { manifest } => {
            let s = stats(&DatasetManifest::load(&manifest)?);
            println!("{}", serde_json::to_string_pretty(&s).expect("stats serialize"));
        }
        DatasetCmd::Compact { manifest } => {
            ManifestWriter::open(&manifest)?.compact()?;
        }
    }
    Ok(())
}

fn learn(cmd: LearnCmd) -> Result<()> {
    match cmd {
        LearnCmd::Train {
            features,
            manifest,
            epochs,
            seed,
            learning_rate,
            batch_size,
            weight_decay,
            hidden,
            out,
            log,
        } => {
            let config = TrainConfig { epochs, learning_rate, batch_size, seed, weight_decay, hidden };
            let store = FeatureStore::load(&features)?;
            let splits = DatasetManifest::load(&manifest)?.splits();
            let (head, train_log) = train_head(&store, &splits, &config)?;
            save_checkpoint(&out, &Checkpoint { head, config, backbone: store.backbone.clone() })?;
            match log {
                Some(p) => fleet_census::jsonl::write_atomic(p, &train_log.epochs)?,
                None => print_json_lines(&train_log.epochs),
            }
        }
        LearnCmd::Predict { head, features } => {
            let ck = load_checkpoint(&head)?;
            let store = FeatureStore::load(&features)?;
            if store.dim != ck.head.input_dim() {
                return Err(Error::Shape { expected: ck.head.input_dim(), found: store.dim });
            }
            for row in &store.rows {
                let x: Vec<f64> = row.values.iter().map(|&v| f64::from(v)).collect();
                let p = ck.head.predict(&x)?;
                println!(
                    "{}",
                    serde_json::json!({"content_hash": row.content_hash, "class": p.class, "probabilities": p.probabilities})
                );
            }
        }
    }
    Ok(())
}

fn eval(cmd: EvalCmd) -> Result<()> {
    let EvalCmd::Run { head, features, manifest, format, out } = cmd;
    let format: ReportFormat = format.parse()?;
    let ck = load_checkpoint(&head)?;
    let store = FeatureStore::load(&features)?;
    let splits = DatasetManifest::load(&manifest)?.splits();
    let report = evaluate(&ck.head, &store, &splits)?;
    let text = render_report(&report, format);
    match out {
        Some(p) => fleet_census::jsonl::write_bytes_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn check(cmd: CheckCmd) -> Result<bool> {
    let warnings = match cmd {
        CheckCmd::Detections { path } => {
            let d = SidecarDetector::load(&path)?;
            println!("{} images with detections", d.image_count());
            d.warnings().to_vec()
        }
        CheckCmd::Features { path } => {
            let s = FeatureStore::check_file(&path)?;
            println!("backbone {:?}, dim {}, {} rows", s.backbone, s.dim, s.rows);
            s.warnings
        }
    };
    for w in &warnings {
        println!("warning: {w}");
    }
    Ok(warnings.is_empty())
}

fn run(args: RunArgs) -> i32 {
    let config = PipelineConfig::load(&args.config, &args.overrides);
    let stages = args.stages.as_deref().map(parse_stages).transpose();
    let (config, stages) = match (config, stages) {
        (Ok(c), Ok(s)) => (c, s),
        (c, s) => {
            let mut problems = Vec::new();
            for e in [c.err(), s.err()].into_iter().flatten() {
                match e {
                    Error::Config(p) => problems.extend(p),
                    other => problems.push(other.to_string()),
                }
            }
            let err = Error::Config(problems);
            println!("{}", serde_json::to_string(&ErrorReport::from_error(None, &err)).expect("report"));
            eprintln!("error: {err}");
            return exit_code(&err);
        }
    };
    let outcome = run_pipeline(&config, stages.as_deref());
    print_json_lines(&outcome.stages);
    if let Some(e) = &outcome.error {
        println!("{}", serde_json::to_string(e).expect("report"));
        eprintln!("error in stage {}: {}", e.stage.map(|s| s.as_str()).unwrap_or("-"), e.message);
    }
    outcome.exit_code
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Taxonomy(c) => taxonomy(c),
        Command::Ingest(c) => ingest(c),
        Command::Curate(c) => curate(c),
        Command::Dataset(c) => dataset(c),
        Command::Learn(c) => learn(c),
        Command::Eval(c) => eval(c),
        Command::Check(c) => match check(c) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Run(args) => return ExitCode::from(run(args) as u8),
        Command::Fixtures(args) => {
            let spec = FixtureSpec { seed: args.seed, images_per_model: args.images_per_model, ..FixtureSpec::default() };
            generate(&args.out, &spec).map(|c| {
                println!("{} images, config at {}", c.files.len(), c.config.display());
            })
        }
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
