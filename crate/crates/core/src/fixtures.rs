//! Seeded offline corpus: registry, local image folders, a detection sidecar
//! and a pipeline config, with a known number of bad inputs mixed in.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::curation::{write_sidecar, SidecarLine};
use crate::error::{Error, Result};
use crate::hash::{difference_hash, hamming, ContentHash};
use crate::ingest::model_slug;
use crate::rng::SplitMix64;
use crate::taxonomy::{bundled_registry, Registry, VehicleClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injection {
    /// PNG cut off halfway.
    Corrupt,
    /// PNG bytes under a `.jpg` name.
    TypeMismatch,
    /// Decodes fine, but the only detection is a person.
    NonVehicle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub models_per_class: usize,
    pub images_per_model: usize,
    /// Bad inputs, assigned to classes round-robin.
    pub injections: Vec<Injection>,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for FixtureSpec {
    /// 80 raws (20 per class), 8 of them bad.
    fn default() -> Self {
        use Injection::*;
        FixtureSpec {
            models_per_class: 2,
            images_per_model: 10,
            injections: vec![Corrupt, TypeMismatch, NonVehicle, Corrupt, TypeMismatch, NonVehicle, Corrupt, TypeMismatch],
            width: 160,
            height: 120,
            seed: 2021,
        }
    }
}

impl FixtureSpec {
    pub fn images_per_class(&self) -> usize {
        self.models_per_class * self.images_per_model
    }

    pub fn raw_count(&self) -> usize {
        self.images_per_class() * VehicleClass::COUNT
    }

    /// Good images per class after the injected inputs are rejected.
    pub fn expected_accepted(&self, class: VehicleClass) -> usize {
        let bad = (0..self.injections.len())
            .filter(|i| i % VehicleClass::COUNT == class.index())
            .count();
        self.images_per_class() - bad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureImage {
    pub path: PathBuf,
    pub content_hash: ContentHash,
    pub vehicle_class: VehicleClass,
    pub injection: Option<Injection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureCorpus {
    pub root: PathBuf,
    pub registry: PathBuf,
    pub images: PathBuf,
    pub detections: PathBuf,
    pub config: PathBuf,
    pub files: Vec<FixtureImage>,
}

impl FixtureCorpus {
    pub fn injected(&self) -> usize {
        self.files.iter().filter(|f| f.injection.is_some()).count()
    }
}

fn detector_label(class: VehicleClass) -> &'static str {
    match class {
        VehicleClass::LightDuty => "van",
        VehicleClass::MediumDuty | VehicleClass::HeavyDuty => "truck",
        VehicleClass::NonLogistic => "car",
    }
}

/// Random blocky picture. Blocks are large relative to the 9x8 hash grid,
/// so different seeds give unrelated difference hashes.
fn blocky(rng: &mut SplitMix64, width: u32, height: u32) -> RgbImage {
    let (bw, bh) = (width.div_ceil(9), height.div_ceil(8));
    let cols = width.div_ceil(bw) as usize;
    let cells: Vec<[u8; 3]> = (0..cols * height.div_ceil(bh) as usize)
        .map(|_| {
            let v = rng.next_u64();
            [v as u8, (v >> 8) as u8, (v >> 16) as u8]
        })
        .collect();
    RgbImage::from_fn(width, height, |x, y| {
        Rgb(cells[(y / bh) as usize * cols + (x / bw) as usize])
    })
}

fn encode(img: &RgbImage, format: ImageFormat) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(img.clone())
        .write_to(&mut buf, format)
        .map_err(|e| Error::Invariant(format!("fixture encode failed: {e}")))?;
    Ok(buf.into_inner())
}

/// Write the corpus under `root`:
///
/// ```text
/// registry.tsv        models used by the corpus
/// images/<slug>/      raw files per model
/// detections.jsonl    detection sidecar keyed by content hash
/// pipeline.toml       config running every stage on the above
/// ```
pub fn generate(root: &Path, spec: &FixtureSpec) -> Result<FixtureCorpus> {
    if spec.models_per_class == 0 || spec.images_per_model == 0 {
        return Err(Error::config("fixture needs at least one model and one image per class"));
    }
    if spec.width < 96 || spec.height < 96 {
        return Err(Error::config("fixture images must be at least 96x96"));
    }
    let bundled = bundled_registry();
    let mut entries = Vec::new();
    for class in VehicleClass::ALL {
        let models: Vec<_> = bundled.models_of(class).take(spec.models_per_class).cloned().collect();
        if models.len() < spec.models_per_class {
            return Err(Error::config(format!("bundled registry has too few {class} models")));
        }
        entries.extend(models);
    }
    let registry = Registry::from_entries(entries)?;
    let registry_path = root.join("registry.tsv");
    crate::jsonl::write_bytes_atomic(&registry_path, registry.to_tsv().as_bytes())?;

    let per_class = spec.images_per_class();
    let injection_at = |class: VehicleClass, idx: usize| -> Option<Injection> {
        spec.injections.iter().enumerate().find_map(|(i, inj)| {
            (i % VehicleClass::COUNT == class.index() && idx == per_class - 1 - i / VehicleClass::COUNT)
                .then_some(*inj)
        })
    };

    let (w, h) = (spec.width, spec.height);
    let bbox = (w / 10, h / 10, w - w / 5, h - h / 5);
    let images_dir = root.join("images");
    let mut rng = SplitMix64::derive(spec.seed, "fixture-images");
    let mut seen_hashes: Vec<u64> = Vec::new();
    let mut files = Vec::new();
    let mut sidecar = Vec::new();

    for class in VehicleClass::ALL {
        for (m, model) in registry.models_of(class).enumerate() {
            let dir = images_dir.join(model_slug(&model.make, &model.model));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for k in 0..spec.images_per_model {
                let idx = m * spec.images_per_model + k;
                let injection = injection_at(class, idx);
                let img = loop {
                    let candidate = blocky(&mut rng, w, h);
                    let crop = DynamicImage::ImageRgb8(candidate.clone()).crop_imm(bbox.0, bbox.1, bbox.2, bbox.3);
                    let dh = difference_hash(&crop);
                    if seen_hashes.iter().all(|&o| hamming(o, dh) > 12) {
                        seen_hashes.push(dh);
                        break candidate;
                    }
                };
                let jpeg = injection.is_none() && k % 5 == 4;
                let (bytes, ext) = match injection {
                    Some(Injection::Corrupt) => {
                        let full = encode(&img, ImageFormat::Png)?;
                        (full[..full.len() / 2].to_vec(), "png")
                    }
                    Some(Injection::TypeMismatch) => (encode(&img, ImageFormat::Png)?, "jpg"),
                    _ if jpeg => (encode(&img, ImageFormat::Jpeg)?, "jpg"),
                    _ => (encode(&img, ImageFormat::Png)?, "png"),
                };
                let hash = ContentHash::of(&bytes);
                let path = dir.join(format!("img-{k:03}.{ext}"));
                crate::jsonl::write_bytes_atomic(&path, &bytes)?;
                let det = |label: &str, confidence: f64| SidecarLine {
                    content_hash: hash,
                    label: label.into(),
                    confidence,
                    x: bbox.0,
                    y: bbox.1,
                    width: bbox.2,
                    height: bbox.3,
                };
                match injection {
                    None => {
                        sidecar.push(det(detector_label(class), 0.9));
                        if k % 3 == 0 {
                            sidecar.push(det("person", 0.3));
                        }
                    }
                    Some(Injection::NonVehicle) => sidecar.push(det("person", 0.95)),
                    Some(_) => {}
                }
                files.push(FixtureImage {
                    path,
                    content_hash: hash,
                    vehicle_class: class,
                    injection,
                });
            }
        }
    }
    sidecar.sort_by(|a, b| a.content_hash.cmp(&b.content_hash).then(a.label.cmp(&b.label)));
    let detections = root.join("detections.jsonl");
    write_sidecar(&detections, "fixture-oracle", &sidecar)?;

    let min_accepted = VehicleClass::ALL
        .iter()
        .map(|&c| spec.expected_accepted(c))
        .min()
        .unwrap_or(0);
    let config = root.join("pipeline.toml");
    let seed = spec.seed;
    let text = format!(
        r#"# Offline fixture run: local folders, sidecar detections, synthetic features.
[paths]
workspace = "work"
registry = "registry.tsv"

[ingest]
per_class = {per_class}
local_folder = "images"

[ingest.sources]
local-folder = 1.0

[curate]
detections = "detections.jsonl"

[dataset]
per_class = {min_accepted}
test_fraction = 0.1
seed = {seed}

[extract]
mode = "synthetic"
dim = 16
seed = {seed}

[train]
epochs = 10
learning_rate = 0.1
batch_size = 8
seed = {seed}

[eval]
format = "text"
"#
    );
    crate::jsonl::write_bytes_atomic(&config, text.as_bytes())?;

    Ok(FixtureCorpus {
        root: root.to_path_buf(),
        registry: registry_path,
        images: images_dir,
        detections,
        config,
        files,
    })
}
