mod common;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::{entry, fill_folder, png};
use fleet_census::ingest::{
    ingest_run, Candidate, HttpListSource, ImageSource, IngestReportLine, LocalFolderSource, PlanEntry, Politeness,
    QueryPlan, SourceError, SourceKind, RAW_MANIFEST,
};
use fleet_census::{Error, VehicleClass};

fn unthrottled() -> BTreeMap<SourceKind, Politeness> {
    SourceKind::ALL.iter().map(|&k| (k, Politeness::unthrottled())).collect()
}

fn local(root: &std::path::Path) -> HashMap<SourceKind, Arc<dyn ImageSource>> {
    let mut m: HashMap<SourceKind, Arc<dyn ImageSource>> = HashMap::new();
    m.insert(SourceKind::LocalFolder, Arc::new(LocalFolderSource::new(root)));
    m
}

#[test]
fn two_classes_then_idempotent_rerun() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    fill_folder(src.path(), "renault-kangoo", 5, 1);
    fill_folder(src.path(), "volvo-fh", 5, 2);
    let plan = QueryPlan {
        entries: vec![
            entry("Renault", "Kangoo", VehicleClass::LightDuty, SourceKind::LocalFolder, 5),
            entry("Volvo", "FH", VehicleClass::HeavyDuty, SourceKind::LocalFolder, 5),
        ],
    };
    let adapters = local(src.path());
    let first = ingest_run(&plan, &adapters, &unthrottled(), out.path()).unwrap();
    let totals = first.class_totals();
    assert_eq!(totals[&VehicleClass::LightDuty], 5);
    assert_eq!(totals[&VehicleClass::HeavyDuty], 5);
    assert_eq!(first.new_records(), 10);
    assert_eq!(first.total_records(), 10);
    let manifest_before = std::fs::read(out.path().join(RAW_MANIFEST)).unwrap();
    assert_eq!(manifest_before.iter().filter(|&&b| b == b'\n').count(), 10);

    let second = ingest_run(&plan, &adapters, &unthrottled(), out.path()).unwrap();
    assert_eq!(second.new_records(), 0);
    assert!(second.all_skipped());
    assert_eq!(std::fs::read(out.path().join(RAW_MANIFEST)).unwrap(), manifest_before);
}

struct AlwaysDown;

impl ImageSource for AlwaysDown {
    fn kind(&self) -> SourceKind {
        SourceKind::SearchEngine
    }
    fn search(&self, _: &PlanEntry, limit: usize) -> Result<Vec<Candidate>, SourceError> {
        Ok((0..limit)
            .map(|i| Candidate { origin: format!("https://down.example/{i}.png"), file_name: format!("{i}.png") })
            .collect())
    }
    fn download(&self, c: &Candidate) -> Result<Vec<u8>, SourceError> {
        Err(SourceError::Transient(format!("{}: connection reset", c.origin)))
    }
}

#[test]
fn failing_adapter_does_not_stop_others() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    fill_folder(src.path(), "renault-kangoo", 3, 3);
    let plan = QueryPlan {
        entries: vec![
            entry("Renault", "Kangoo", VehicleClass::LightDuty, SourceKind::LocalFolder, 3),
            entry("Volvo", "FH", VehicleClass::HeavyDuty, SourceKind::SearchEngine, 2),
        ],
    };
    let mut adapters = local(src.path());
    adapters.insert(SourceKind::SearchEngine, Arc::new(AlwaysDown));
    let report = ingest_run(&plan, &adapters, &unthrottled(), out.path()).unwrap();
    assert_eq!(report.new_records(), 3);
    let failures: Vec<_> = report.failures().collect();
    assert!(failures.len() >= 2, "{failures:?}");
    for f in failures {
        let IngestReportLine::Failure { failure, model, .. } = f else { panic!("{f:?}") };
        assert_eq!(model, "FH");
        assert_eq!(failure.attempts, Politeness::unthrottled().max_attempts);
    }
}

#[test]
fn missing_adapter_and_unwritable_root_are_config_errors() {
    let out = tempfile::tempdir().unwrap();
    let plan = QueryPlan { entries: vec![entry("Volvo", "FH", VehicleClass::HeavyDuty, SourceKind::CadRender, 1)] };
    let err = ingest_run(&plan, &HashMap::new(), &unthrottled(), out.path()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");

    let file = out.path().join("not-a-dir");
    std::fs::write(&file, b"x").unwrap();
    let err = ingest_run(&QueryPlan::default(), &HashMap::new(), &unthrottled(), &file.join("sub")).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

/// Serves distinct images slowly and records the peak number of concurrent downloads.
struct Instrumented {
    declared: usize,
    now: AtomicUsize,
    peak: AtomicUsize,
}

impl ImageSource for Instrumented {
    fn kind(&self) -> SourceKind {
        SourceKind::CadRender
    }
    fn max_in_flight(&self) -> usize {
        self.declared
    }
    fn search(&self, e: &PlanEntry, limit: usize) -> Result<Vec<Candidate>, SourceError> {
        Ok((0..limit)
            .map(|i| Candidate { origin: format!("cad://{}/{i}", e.model), file_name: format!("{i}.png") })
            .collect())
    }
    fn download(&self, c: &Candidate) -> Result<Vec<u8>, SourceError> {
        let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(n, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(15));
        self.now.fetch_sub(1, Ordering::SeqCst);
        let seed = c.origin.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        Ok(png(seed, 16, 16))
    }
}

#[test]
fn in_flight_never_exceeds_limit() {
    for (declared, configured, bound) in [(2, 8, 2), (8, 3, 3), (1, 4, 1)] {
        let out = tempfile::tempdir().unwrap();
        let plan = QueryPlan {
            entries: (0..6)
                .map(|m| entry("Make", &format!("M{m}"), VehicleClass::MediumDuty, SourceKind::CadRender, 4))
                .collect(),
        };
        let source = Arc::new(Instrumented { declared, now: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let mut adapters: HashMap<SourceKind, Arc<dyn ImageSource>> = HashMap::new();
        adapters.insert(SourceKind::CadRender, source.clone());
        let mut politeness = unthrottled();
        politeness.get_mut(&SourceKind::CadRender).unwrap().max_in_flight = configured;
        let report = ingest_run(&plan, &adapters, &politeness, out.path()).unwrap();
        assert_eq!(report.new_records(), 24);
        let peak = source.peak.load(Ordering::SeqCst);
        assert!(peak <= bound, "peak {peak} > {bound}");
        assert!(peak >= 1);
    }
}

/// Minimal HTTP/1.1 server: `/ok/<n>.png` gives an image, `/gone` 404, `/quota` 429.
fn serve(requests: usize) -> (String, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        for stream in listener.incoming().take(requests) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
            }
            let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let (status, body) = if let Some(n) = path.strip_prefix("/ok/") {
                ("200 OK", png(n.trim_end_matches(".png").parse().unwrap_or(0), 20, 20))
            } else if path == "/quota" {
                ("429 Too Many Requests", Vec::new())
            } else {
                ("404 Not Found", Vec::new())
            };
            let head = format!(
                "HTTP/1.1 {status}\r\nContent-Length: {}\r\nContent-Type: image/png\r\nConnection: close\r\n\r\n",
                body.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(&body).unwrap();
        }
    });
    (base, handle)
}

#[test]
fn http_list_source_against_local_server() {
    let (base, server) = serve(4);
    let mut results = HashMap::new();
    results.insert(
        "iveco-daily".to_string(),
        vec![format!("{base}/ok/1.png"), format!("{base}/gone"), format!("{base}/ok/2.png")],
    );
    results.insert("man-tgx".to_string(), vec![format!("{base}/quota")]);
    let source = HttpListSource::new(SourceKind::SearchEngine, results, Duration::from_secs(5));
    let mut adapters: HashMap<SourceKind, Arc<dyn ImageSource>> = HashMap::new();
    adapters.insert(SourceKind::SearchEngine, Arc::new(source));
    let plan = QueryPlan {
        entries: vec![
            entry("Iveco", "Daily", VehicleClass::MediumDuty, SourceKind::SearchEngine, 3),
            entry("MAN", "TGX", VehicleClass::HeavyDuty, SourceKind::SearchEngine, 1),
        ],
    };
    let out = tempfile::tempdir().unwrap();
    let report = ingest_run(&plan, &adapters, &unthrottled(), out.path()).unwrap();
    server.join().unwrap();
    assert_eq!(report.new_records(), 2);
    assert!(report
        .lines
        .iter()
        .any(|l| matches!(l, IngestReportLine::Skipped { model, .. } if model == "TGX")));
    assert!(report.failures().any(|l| matches!(l, IngestReportLine::Failure { model, .. } if model == "Daily")));
}
