#![allow(dead_code)]

use std::io::Cursor;
use std::path::Path;

use fleet_census::ingest::{PlanEntry, SourceKind};
use fleet_census::learner::{loss_and_grad, ClassifierHead, Example};
use fleet_census::rng::SplitMix64;
use fleet_census::VehicleClass;
use image::{DynamicImage, ImageFormat, Rgb, RgbImage};

/// Small PNG whose pixels depend on `seed`.
pub fn png(seed: u64, width: u32, height: u32) -> Vec<u8> {
    let mut rng = SplitMix64::new(seed);
    let cells: Vec<[u8; 3]> = (0..64)
        .map(|_| {
            let v = rng.next_u64();
            [v as u8, (v >> 8) as u8, (v >> 16) as u8]
        })
        .collect();
    let img = RgbImage::from_fn(width, height, |x, y| Rgb(cells[((y * 8 / height) * 8 + x * 8 / width) as usize]));
    let mut buf = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(img).write_to(&mut buf, ImageFormat::Png).unwrap();
    buf.into_inner()
}

pub fn entry(make: &str, model: &str, class: VehicleClass, source: SourceKind, target: u64) -> PlanEntry {
    PlanEntry {
        make: make.into(),
        model: model.into(),
        vehicle_class: class,
        source,
        query: format!("{make} {model}"),
        target,
    }
}

/// Fill `<root>/<slug>/img-NN.png` with `n` distinct images.
pub fn fill_folder(root: &Path, slug: &str, n: usize, seed: u64) {
    let dir = root.join(slug);
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..n {
        std::fs::write(dir.join(format!("img-{i:02}.png")), png(seed * 1000 + i as u64, 32, 24)).unwrap();
    }
}

/// Central-difference check of [`loss_and_grad`] at every parameter.
pub struct GradientCheck {
    /// `|a - n| / max(|a|, |n|)` over whole gradient vectors.
    pub relative: f64,
    /// Largest per-component relative error, with a 1e-6 floor on the denominator.
    pub worst_component: f64,
    pub params: usize,
}

pub fn gradient_check(head: &ClassifierHead, batch: &[Example<'_>], eps: f64) -> GradientCheck {
    let (_, grads) = loss_and_grad(head, batch).unwrap();
    let analytic = grads.flat();
    let params = head.params();
    let mut probe = head.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let mut p = params.clone();
        p[i] += eps;
        probe.set_params(&p).unwrap();
        let up = loss_and_grad(&probe, batch).unwrap().0;
        p[i] -= 2.0 * eps;
        probe.set_params(&p).unwrap();
        let down = loss_and_grad(&probe, batch).unwrap().0;
        numeric.push((up - down) / (2.0 * eps));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let worst_component = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max);
    GradientCheck {
        relative: norm(&diff) / norm(&analytic).max(norm(&numeric)).max(f64::MIN_POSITIVE),
        worst_component,
        params: analytic.len(),
    }
}

/// Head with every parameter drawn uniformly from [-scale, scale].
pub fn random_head(dim: usize, hidden: &[usize], scale: f64, seed: u64) -> ClassifierHead {
    let mut head = ClassifierHead::new(dim, hidden, seed).unwrap();
    let mut rng = SplitMix64::derive(seed, "random-head");
    let p: Vec<f64> = (0..head.param_count()).map(|_| rng.uniform(-scale, scale)).collect();
    head.set_params(&p).unwrap();
    head
}

/// Isotropic unit-variance clusters, one per class, centred at
/// `separation * e_class` along the first four axes.
pub fn clusters(dim: usize, per_class: usize, separation: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    assert!(dim >= VehicleClass::COUNT);
    let mut rng = SplitMix64::derive(seed, "clusters");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in 0..VehicleClass::COUNT {
        for _ in 0..per_class {
            let mut x: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            x[c] += separation;
            xs.push(x);
            ys.push(c);
        }
    }
    (xs, ys)
}

pub fn examples<'a>(xs: &'a [Vec<f64>], ys: &[usize]) -> Vec<Example<'a>> {
    xs.iter().zip(ys).map(|(x, &label)| Example { features: x, label }).collect()
}

pub fn accuracy(head: &ClassifierHead, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let correct = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| head.predict(x).unwrap().class.index() == y)
        .count();
    correct as f64 / xs.len() as f64
}
