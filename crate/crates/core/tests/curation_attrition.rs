mod common;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use fleet_census::curation::{curate_run, CropRecord, CurationConfig, OutcomeKind, SidecarDetector, CURATED_MANIFEST};
use fleet_census::fixtures::{generate, FixtureSpec};
use fleet_census::ingest::{build_query_plan, ingest_run, ImageSource, LocalFolderSource, PlanRequest, Politeness, SourceKind, SourceMix};
use fleet_census::taxonomy::Registry;
use fleet_census::VehicleClass;

#[test]
fn fixture_corpus_attrition() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec::default();
    let corpus = generate(dir.path(), &spec).unwrap();
    let registry = Registry::load(&corpus.registry).unwrap();
    let plan = build_query_plan(
        &registry,
        &PlanRequest::new(spec.images_per_class() as u64, SourceMix::single(SourceKind::LocalFolder)),
    )
    .unwrap();
    let mut adapters: HashMap<SourceKind, Arc<dyn ImageSource>> = HashMap::new();
    adapters.insert(SourceKind::LocalFolder, Arc::new(LocalFolderSource::new(&corpus.images)));
    let politeness: BTreeMap<_, _> = SourceKind::ALL.iter().map(|&k| (k, Politeness::unthrottled())).collect();
    let work = dir.path().join("work");
    let ingest = ingest_run(&plan, &adapters, &politeness, &work).unwrap();
    assert_eq!(ingest.total_records(), spec.raw_count() as u64);

    let detector = SidecarDetector::load(&corpus.detections).unwrap();
    let report = curate_run(&work, &detector, &CurationConfig::default(), &work).unwrap();
    assert_eq!(report.inputs, 80);
    assert!((70..=74).contains(&report.accepted_images()), "{report:?}");
    assert_eq!(report.outcome_total(OutcomeKind::RejectedCorrupt), 3);
    assert_eq!(report.outcome_total(OutcomeKind::RejectedTypeMismatch), 3);
    assert_eq!(report.outcome_total(OutcomeKind::RejectedNoVehicle), 2);
    for class in VehicleClass::ALL {
        assert_eq!(report.counts[&(class, OutcomeKind::Accepted)], spec.expected_accepted(class) as u64);
    }

    let crops: Vec<CropRecord> = fleet_census::jsonl::read(work.join(CURATED_MANIFEST)).unwrap();
    assert_eq!(crops.len() as u64, report.crops_kept);
    let before = std::fs::read(work.join(CURATED_MANIFEST)).unwrap();
    let again = curate_run(&work, &detector, &CurationConfig::default(), &work).unwrap();
    assert_eq!(again, report);
    assert_eq!(std::fs::read(work.join(CURATED_MANIFEST)).unwrap(), before);
}
