//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

mod common;

use std::time::{Duration, Instant};

use common::{accuracy, clusters, examples, gradient_check, random_head};
use fleet_census::config::PipelineConfig;
use fleet_census::dataset::{balance, split, DatasetManifest, ManifestEntry, Split};
use fleet_census::evaluation::{confusion_matrix, EvalReport};
use fleet_census::fixtures::{generate, FixtureSpec};
use fleet_census::ingest::SourceKind;
use fleet_census::learner::{loss_and_grad, train_examples, ClassifierHead, TrainConfig};
use fleet_census::pipeline::{run_pipeline, Layout, Stage, EXIT_OK};
use fleet_census::rng::SplitMix64;
use fleet_census::taxonomy::{bundled_registry, classify_physical, PhysicalSpec};
use fleet_census::{ContentHash, VehicleClass};

use VehicleClass::{HeavyDuty, LightDuty, MediumDuty};

type Check = Result<String, String>;
type Criterion = fn() -> Check;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Check {
    ensure(
        elapsed < limit,
        format!("{detail}; {:.2} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

fn taxonomy() -> Check {
    let start = Instant::now();
    let classify = |g: f64, h: f64| classify_physical(&PhysicalSpec::new(g, h).unwrap()).unwrap();
    // (gvm range, height range, class) per table row; samples hit both ends.
    let rows = [
        ((0.5, 3.5), (0.5, 2.0), LightDuty),
        ((0.5, 3.5), (2.0 + 1e-9, 3.0), MediumDuty),
        ((3.5 + 1e-9, 60.0), (3.0 + 1e-9, 5.0), HeavyDuty),
    ];
    let mut rng = SplitMix64::derive(1, "acceptance/taxonomy");
    for ((g0, g1), (h0, h1), class) in rows {
        let mut samples = vec![(g0, h0), (g0, h1), (g1, h0), (g1, h1)];
        samples.extend((0..1000).map(|_| (rng.uniform(g0, g1), rng.uniform(h0, h1))));
        for (g, h) in samples {
            let got = classify(g, h);
            if got.class != class || got.warning {
                return Err(format!("({g}, {h}) gave {:?}, expected {class:?}", got.class));
            }
        }
    }

    let registry = bundled_registry();
    let examples = [
        ("Peugeot", "Expert", LightDuty),
        ("Renault", "Kangoo", LightDuty),
        ("Citroen", "Berlingo", LightDuty),
        ("Volkswagen", "Caddy", LightDuty),
        ("Ford", "Transit Courier", LightDuty),
        ("Nissan", "Caravan", LightDuty),
        ("Opel", "Combo", LightDuty),
        ("Mercedes", "Vito", LightDuty),
        ("Fiat", "Scudo", LightDuty),
        ("Peugeot", "Boxer", MediumDuty),
        ("Renault", "Master", MediumDuty),
        ("Citroen", "Jumper", MediumDuty),
        ("Volkswagen", "Crafter", MediumDuty),
        ("Ford", "Transit 350", MediumDuty),
        ("Nissan", "NV400", MediumDuty),
        ("Opel", "Movano", MediumDuty),
        ("Mercedes", "Sprinter", MediumDuty),
        ("Fiat", "Ducato", MediumDuty),
        ("Mercedes", "Atego", HeavyDuty),
        ("Renault", "D Wide", HeavyDuty),
        ("Volvo", "FH", HeavyDuty),
        ("MAN", "TGL", HeavyDuty),
        ("Mitsubishi", "Canter", HeavyDuty),
        ("Nissan", "Atleon", HeavyDuty),
        ("Kenworth", "K370", HeavyDuty),
        ("Isuzu", "Serie N", HeavyDuty),
        ("Scania", "R", HeavyDuty),
    ];
    for (make, model, class) in examples {
        match registry.lookup_model(make, model) {
            Ok(c) if c == class => {}
            other => return Err(format!("{make} {model}: {other:?}, expected {class:?}")),
        }
    }
    let combi = registry.get("Opel", "Combo").unwrap();
    if !combi.query_terms.iter().any(|t| t == "Open Combi") {
        return Err("Opel Combo lost its published spelling".into());
    }

    let mut rng = SplitMix64::derive(2, "acceptance/totality");
    for _ in 0..100_000 {
        let g = rng.uniform(1e-6, 100.0);
        let h = rng.uniform(1e-6, 10.0);
        let got = classify(g, h);
        let expect = if g > 3.5 {
            HeavyDuty
        } else if h <= 2.0 {
            LightDuty
        } else {
            MediumDuty
        };
        if got.class != expect {
            return Err(format!("({g}, {h}) gave {:?}", got.class));
        }
    }
    within(
        start.elapsed(),
        Duration::from_secs(1),
        format!("3 table rows, {} example models, 100000 random pairs", examples.len()),
    )
}

fn attrition() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = generate(dir.path(), &FixtureSpec::default()).map_err(|e| e.to_string())?;
    let config = PipelineConfig::load(&corpus.config, &[]).map_err(|e| e.to_string())?;
    let stages = [Stage::Taxonomy, Stage::Plan, Stage::Ingest, Stage::Curate];
    let out = run_pipeline(&config, Some(&stages));
    if out.exit_code != EXIT_OK {
        return Err(format!("exit {}: {:?}", out.exit_code, out.error));
    }
    let summary = &out.stages[Stage::Curate as usize].summary;
    let inputs = summary["inputs"].as_u64().unwrap_or(0);
    let accepted = summary["accepted_images"].as_u64().unwrap_or(0);
    let detail = format!(
        "{accepted}/{inputs} accepted ({:.1}%), {} injected",
        100.0 * accepted as f64 / inputs.max(1) as f64,
        corpus.injected()
    );
    ensure(inputs == 80 && (70..=74).contains(&accepted), detail.clone())?;
    within(start.elapsed(), Duration::from_secs(10), detail)
}

fn balance_split() -> Check {
    let start = Instant::now();
    let mut entries = Vec::with_capacity(72_000);
    for (c, class) in VehicleClass::ALL.into_iter().enumerate() {
        for i in 0..18_000u64 {
            let id = c as u64 * 1_000_000 + i;
            entries.push(ManifestEntry {
                content_hash: ContentHash::of(&id.to_le_bytes()),
                stored_path: format!("curated/{id}.png"),
                vehicle_class: class,
                source: SourceKind::SearchEngine,
                make: "make".into(),
                model: "model".into(),
                split: Split::Unassigned,
                quarantined: false,
            });
        }
    }
    let manifest = DatasetManifest::from_entries(entries).map_err(|e| e.to_string())?;
    let run = || {
        let view = balance(&manifest, 18_000, 2021, true).unwrap().view;
        split(&view, 0.10, 2021).unwrap()
    };
    let a = run();
    let b = run();
    let (train, test) = (a.count(Split::Train), a.count(Split::Test));
    let per_class: Vec<usize> = VehicleClass::ALL
        .iter()
        .map(|&c| {
            a.labels
                .iter()
                .filter(|(h, s)| **s == Split::Test && manifest.get(h).unwrap().vehicle_class == c)
                .count()
        })
        .collect();
    let detail = format!("train {train}, test {test}, test per class {per_class:?}, repeat identical {}", a == b);
    ensure(
        train == 64_800 && test == 7_200 && per_class.iter().all(|&n| n == 1_800) && a == b,
        detail.clone(),
    )?;
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn gradient() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_component = 0.0f64;
    let mut points = 0;
    for dim in [4, 8, 128] {
        for k in 0..40u64 {
            let seed = dim as u64 * 1000 + k;
            let (xs, ys) = clusters(dim, 2, 1.5, seed);
            let head = random_head(dim, &[], 0.1, seed);
            let check = gradient_check(&head, &examples(&xs, &ys), 1e-5);
            worst = worst.max(check.relative);
            worst_component = worst_component.max(check.worst_component);
            points += 1;
        }
    }
    let detail = format!(
        "{points} random points over D in {{4, 8, 128}}, max relative error {worst:.2e} \
         (worst single component {worst_component:.2e})"
    );
    ensure(points >= 100 && worst < 1e-5, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn initial_loss() -> Check {
    let mut worst = 0.0f64;
    let mut rng = SplitMix64::derive(3, "acceptance/initial-loss");
    for k in 0..50 {
        let dim = 1 + rng.below(64) as usize;
        let n = 1 + rng.below(40) as usize;
        let scale = [1e-3, 1.0, 1e3][k % 3];
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| scale * rng.normal()).collect()).collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.below(4) as usize).collect();
        let (loss, _) = loss_and_grad(&ClassifierHead::zeros(dim), &examples(&xs, &ys)).unwrap();
        worst = worst.max((loss - 4f64.ln()).abs());
    }
    ensure(worst < 1e-12, format!("50 random batches, max |loss - ln 4| = {worst:.1e}"))
}

fn convex_descent() -> Check {
    let (xs, ys) = clusters(5, 100, 1.0, 6);
    let smooth = 0.5 * xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0).sum::<f64>() / xs.len() as f64;
    let config = TrainConfig {
        epochs: 50,
        learning_rate: 1.0 / smooth,
        batch_size: xs.len(),
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let (_, log) = train_examples(5, &examples(&xs, &ys), &config).map_err(|e| e.to_string())?;
    let mut prev = 4f64.ln();
    let mut increases = 0;
    for e in &log.epochs {
        if e.loss > prev {
            increases += 1;
        }
        prev = e.loss;
    }
    ensure(
        increases == 0 && log.epochs.len() == 50,
        format!(
            "400 points, step {:.4}, loss {:.4} -> {:.4}, {increases} increases in 50 epochs",
            config.learning_rate,
            4f64.ln(),
            prev
        ),
    )
}

fn separable() -> Check {
    let start = Instant::now();
    let sep = 10.0;
    let (xs, ys) = clusters(8, 200, sep, 7);
    let (hx, hy) = clusters(8, 200, sep, 8);
    let centroid_hits = xs
        .iter()
        .zip(&ys)
        .filter(|(x, &y)| {
            let dist = |c: usize| (0..8).map(|d| (x[d] - if d == c { sep } else { 0.0 }).powi(2)).sum::<f64>();
            (0..4).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap() == y
        })
        .count();
    let oracle = centroid_hits as f64 / xs.len() as f64;
    let config = TrainConfig {
        epochs: 10,
        learning_rate: 0.05,
        batch_size: 32,
        seed: 3,
        ..TrainConfig::default()
    };
    let (head, _) = train_examples(8, &examples(&xs, &ys), &config).map_err(|e| e.to_string())?;
    let (train, held) = (accuracy(&head, &xs, &ys), accuracy(&head, &hx, &hy));
    let detail = format!(
        "centre distance {:.1} sigma, centroid oracle {:.2}%, train {:.2}%, held-out {:.2}%",
        sep * 2f64.sqrt(),
        100.0 * oracle,
        100.0 * train,
        100.0 * held
    );
    ensure(oracle >= 0.99 && train >= 0.99 && held >= 0.95, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(10), detail)
}

fn confusion_oracle() -> Check {
    let mut rng = SplitMix64::derive(4, "acceptance/confusion");
    let pairs: Vec<(usize, usize)> = (0..10_000).map(|_| (rng.below(4) as usize, rng.below(4) as usize)).collect();
    let cm = confusion_matrix(&pairs).map_err(|e| e.to_string())?;
    for i in 0..4 {
        for j in 0..4 {
            let brute = pairs.iter().filter(|&&p| p == (i, j)).count() as u64;
            if cm.counts[i][j] != brute {
                return Err(format!("cell ({i}, {j}): {} vs {brute}", cm.counts[i][j]));
            }
        }
    }
    let worst = cm
        .normalized()
        .iter()
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-9, format!("10000 pairs match recount, max |row sum - 1| = {worst:.1e}"))
}

/// Published normalized rows in crate class order (light, medium, heavy, non-logistic).
const PUBLISHED: [[f64; 4]; 4] = [
    [0.8471, 0.0797, 0.0091, 0.0642],
    [0.0693, 0.8807, 0.0301, 0.0199],
    [0.0119, 0.0225, 0.9594, 0.0063],
    [0.0440, 0.0086, 0.0062, 0.9411],
];

/// Output of tests/oracles/confusion_fixture.py.
const RECONSTRUCTED: [[u64; 4]; 4] = [
    [1525, 143, 16, 116],
    [125, 1585, 54, 36],
    [21, 41, 1727, 11],
    [79, 16, 11, 1694],
];

fn table_reconstruction() -> Check {
    let mut pairs = Vec::with_capacity(7200);
    for (t, row) in RECONSTRUCTED.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), n as usize));
        }
    }
    let report = EvalReport::from_confusion(confusion_matrix(&pairs).map_err(|e| e.to_string())?, 0.0);
    let worst = report
        .normalized
        .iter()
        .flatten()
        .zip(PUBLISHED.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let acc = 100.0 * report.accuracy.unwrap_or(0.0);
    let supports: Vec<u64> = report.per_class.iter().map(|c| c.support).collect();
    ensure(
        report.test_size == 7200 && supports.iter().all(|&s| s == 1800) && worst <= 0.02 && (acc - 90.71).abs() <= 0.05,
        format!(
            "7200 predictions, max cell deviation {worst:.6} ({:.4} percentage points), accuracy {acc:.4}%",
            100.0 * worst
        ),
    )
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = generate(dir.path(), &FixtureSpec::default()).map_err(|e| e.to_string())?;
    let config = PipelineConfig::load(&corpus.config, &[]).map_err(|e| e.to_string())?;
    let first = run_pipeline(&config, None);
    if first.exit_code != EXIT_OK {
        return Err(format!("exit {}: {:?}", first.exit_code, first.error));
    }
    let layout = Layout::new(&config);
    let missing: Vec<&str> = Stage::ALL
        .iter()
        .filter(|s| !layout.report(**s).exists())
        .map(|s| s.as_str())
        .collect();
    let second = run_pipeline(&config, None);
    let acc = first.stages[Stage::Eval as usize].summary["accuracy"].as_f64().unwrap_or(0.0);
    let detail = format!(
        "{} stages ran, missing reports {missing:?}, rerun exit {} all up to date {}, test accuracy {:.1}%",
        first.stages.len(),
        second.exit_code,
        second.all_up_to_date(),
        100.0 * acc
    );
    ensure(
        missing.is_empty() && second.exit_code == EXIT_OK && second.all_up_to_date(),
        detail.clone(),
    )?;
    within(start.elapsed(), Duration::from_secs(60), detail)
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("taxonomy", taxonomy),
        ("attrition fixture", attrition),
        ("balance/split arithmetic", balance_split),
        ("gradient check", gradient),
        ("initial loss", initial_loss),
        ("convex descent", convex_descent),
        ("separable clusters", separable),
        ("confusion oracle", confusion_oracle),
        ("confusion table reconstruction", table_reconstruction),
        ("end-to-end offline run", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
