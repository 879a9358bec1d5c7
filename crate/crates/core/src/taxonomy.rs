//! Vehicle classes, the mass/height categorization rules, and the make/model
//! registry that assigns scraped queries to a class.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gross vehicle mass (tons) at or below which a vehicle is light or medium duty.
pub const LIGHT_GVM_MAX_TONS: f64 = 3.5;
/// Total height (meters) at or below which a vehicle under the mass limit is light duty.
pub const LIGHT_HEIGHT_MAX_M: f64 = 2.0;
/// Total height (meters) at or below which a vehicle under the mass limit is medium duty.
pub const MEDIUM_HEIGHT_MAX_M: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VehicleClass {
    LightDuty,
    MediumDuty,
    HeavyDuty,
    NonLogistic,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] = [
        VehicleClass::LightDuty,
        VehicleClass::MediumDuty,
        VehicleClass::HeavyDuty,
        VehicleClass::NonLogistic,
    ];
    pub const COUNT: usize = 4;

    /// Label index used in feature stores and confusion matrices.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Stable identifier used in files and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::LightDuty => "light-duty",
            VehicleClass::MediumDuty => "medium-duty",
            VehicleClass::HeavyDuty => "heavy-duty",
            VehicleClass::NonLogistic => "non-logistic",
        }
    }

    /// Human-facing label for rendered reports.
    pub fn display_name(self) -> &'static str {
        match self {
            VehicleClass::LightDuty => "Light-duty",
            VehicleClass::MediumDuty => "Medium-duty",
            VehicleClass::HeavyDuty => "Heavy-duty",
            VehicleClass::NonLogistic => "Non logistic",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match key.as_str() {
            "lightduty" | "light" => Ok(VehicleClass::LightDuty),
            "mediumduty" | "medium" => Ok(VehicleClass::MediumDuty),
            "heavyduty" | "heavy" => Ok(VehicleClass::HeavyDuty),
            "nonlogistic" | "other" => Ok(VehicleClass::NonLogistic),
            _ => Err(Error::Validation(format!("unknown vehicle class {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSpec {
    pub gvm_tons: f64,
    pub height_m: f64,
}

impl PhysicalSpec {
    pub fn new(gvm_tons: f64, height_m: f64) -> Result<Self> {
        let spec = PhysicalSpec { gvm_tons, height_m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gvm_tons.is_finite() && self.gvm_tons > 0.0) {
            return Err(Error::Validation(format!(
                "gross vehicle mass must be positive, got {}",
                self.gvm_tons
            )));
        }
        if !(self.height_m.is_finite() && self.height_m > 0.0) {
            return Err(Error::Validation(format!(
                "height must be positive, got {}",
                self.height_m
            )));
        }
        Ok(())
    }
}

/// Result of the physical rules. `warning` is set when the vehicle falls outside
/// the table's conjunctions and precedence decided the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhysicalClassification {
    pub class: VehicleClass,
    pub warning: bool,
}

/// Classify by gross vehicle mass first, then by height within the light mass band.
///
/// Never returns [`VehicleClass::NonLogistic`]; that class only comes from the registry.
pub fn classify_physical(spec: &PhysicalSpec) -> Result<PhysicalClassification> {
    spec.validate()?;
    let PhysicalSpec { gvm_tons, height_m } = *spec;
    let classified = if gvm_tons > LIGHT_GVM_MAX_TONS {
        PhysicalClassification {
            class: VehicleClass::HeavyDuty,
            warning: height_m <= MEDIUM_HEIGHT_MAX_M,
        }
    } else if height_m <= LIGHT_HEIGHT_MAX_M {
        PhysicalClassification {
            class: VehicleClass::LightDuty,
            warning: false,
        }
    } else if height_m <= MEDIUM_HEIGHT_MAX_M {
        PhysicalClassification {
            class: VehicleClass::MediumDuty,
            warning: false,
        }
    } else {
        // oversize but light
        PhysicalClassification {
            class: VehicleClass::MediumDuty,
            warning: true,
        }
    };
    Ok(classified)
}

/// Case-insensitive, trimmed, internal whitespace collapsed.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistryEntry {
    pub make: String,
    pub model: String,
    pub vehicle_class: VehicleClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<PhysicalSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub query_terms: Vec<String>,
}

impl ModelRegistryEntry {
    pub fn key(&self) -> (String, String) {
        (normalize_name(&self.make), normalize_name(&self.model))
    }

    /// "<make> <model>" as written in the registry.
    pub fn display_name(&self) -> String {
        format!("{} {}", self.make.trim(), self.model.trim())
    }
}

/// Immutable make/model to class mapping. Entries are kept sorted by
/// normalized (make, model) so iteration order is reproducible.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<ModelRegistryEntry>,
    index: HashMap<(String, String), usize>,
}

pub const REGISTRY_HEADER: [&str; 6] = ["make", "model", "class", "gvm_tons", "height_m", "query_terms"];

impl Registry {
    pub fn from_entries(entries: Vec<ModelRegistryEntry>) -> Result<Self> {
        let mut entries = entries;
        entries.sort_by_key(|e| e.key());
        let mut index = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            check_entry(entry)?;
            if index.insert(entry.key(), i).is_some() {
                return Err(Error::Duplicate(format!(
                    "{} listed more than once",
                    entry.display_name()
                )));
            }
        }
        Ok(Registry { entries, index })
    }

    pub fn entries(&self) -> &[ModelRegistryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, make: &str, model: &str) -> Option<&ModelRegistryEntry> {
        self.index
            .get(&(normalize_name(make), normalize_name(model)))
            .map(|&i| &self.entries[i])
    }

    pub fn lookup_model(&self, make: &str, model: &str) -> Result<VehicleClass> {
        self.get(make, model)
            .map(|e| e.vehicle_class)
            .ok_or_else(|| Error::NotFound(format!("no registry entry for {make:?} {model:?}")))
    }

    /// Classes that have at least one model, with their model counts.
    pub fn class_counts(&self) -> BTreeMap<VehicleClass, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.vehicle_class).or_insert(0) += 1;
        }
        counts
    }

    pub fn models_of(&self, class: VehicleClass) -> impl Iterator<Item = &ModelRegistryEntry> {
        self.entries.iter().filter(move |e| e.vehicle_class == class)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parse the tab-separated registry format. `origin` is used in error messages only.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut header_seen = false;
        let mut entries = Vec::new();
        let mut first_line: HashMap<(String, String), usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if !header_seen {
                let header: Vec<String> = fields.iter().map(|f| f.to_ascii_lowercase()).collect();
                if header.len() < 3 || header[..3] != REGISTRY_HEADER[..3] {
                    return Err(parse_err(
                        lineno,
                        format!("expected header starting with {:?}", REGISTRY_HEADER.join("\\t")),
                    ));
                }
                header_seen = true;
                continue;
            }
            if fields.len() < 3 || fields.len() > REGISTRY_HEADER.len() {
                return Err(parse_err(
                    lineno,
                    format!("expected 3 to 6 tab-separated fields, found {}", fields.len()),
                ));
            }
            let (make, model) = (fields[0], fields[1]);
            if make.is_empty() || model.is_empty() {
                return Err(parse_err(lineno, "make and model must be non-empty".into()));
            }
            let vehicle_class: VehicleClass =
                fields[2].parse().map_err(|e: Error| parse_err(lineno, e.to_string()))?;
            let number = |idx: usize, what: &str| -> Result<Option<f64>> {
                match fields.get(idx).copied().unwrap_or("") {
                    "" | "-" => Ok(None),
                    s => s
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| parse_err(lineno, format!("{what} is not a number: {s:?}"))),
                }
            };
            let gvm = number(3, "gvm_tons")?;
            let height = number(4, "height_m")?;
            let spec = match (gvm, height) {
                (Some(g), Some(h)) => Some(
                    PhysicalSpec::new(g, h).map_err(|e| parse_err(lineno, e.to_string()))?,
                ),
                (None, None) => None,
                _ => {
                    return Err(parse_err(
                        lineno,
                        "gvm_tons and height_m must be given together".into(),
                    ))
                }
            };
            let query_terms = fields
                .get(5)
                .map(|s| {
                    s.split(';')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(String::from)
                        .collect()
                })
                .unwrap_or_default();
            let entry = ModelRegistryEntry {
                make: make.to_string(),
                model: model.to_string(),
                vehicle_class,
                spec,
                query_terms,
            };
            if let Some(prev) = first_line.insert(entry.key(), lineno) {
                return Err(Error::Duplicate(format!(
                    "{}:{lineno}: {} already listed on line {prev}",
                    origin.display(),
                    entry.display_name()
                )));
            }
            check_entry(&entry).map_err(|e| parse_err(lineno, e.to_string()))?;
            entries.push(entry);
        }
        Registry::from_entries(entries)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = REGISTRY_HEADER.join("\t");
        out.push('\n');
        for e in &self.entries {
            let (g, h) = match e.spec {
                Some(s) => (s.gvm_tons.to_string(), s.height_m.to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.make,
                e.model,
                e.vehicle_class,
                g,
                h,
                e.query_terms.join(";")
            ));
        }
        out
    }
}

fn check_entry(entry: &ModelRegistryEntry) -> Result<()> {
    if let Some(spec) = &entry.spec {
        let physical = classify_physical(spec)?;
        if physical.class != entry.vehicle_class {
            return Err(Error::Validation(format!(
                "{} is registered as {} but its specs (gvm {} t, height {} m) classify as {}",
                entry.display_name(),
                entry.vehicle_class,
                spec.gvm_tons,
                spec.height_m,
                physical.class
            )));
        }
    }
    Ok(())
}

/// The registry shipped with the crate: about thirty models per class.
pub const BUNDLED_REGISTRY_TSV: &str = include_str!("../data/registry.tsv");

pub fn bundled_registry() -> Registry {
    Registry::parse(BUNDLED_REGISTRY_TSV, Path::new("<bundled registry>"))
        .expect("bundled registry is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(g: f64, h: f64) -> PhysicalClassification {
        classify_physical(&PhysicalSpec { gvm_tons: g, height_m: h }).unwrap()
    }

    #[test]
    fn table_ranges() {
        assert_eq!(classify(3.0, 1.9).class, VehicleClass::LightDuty);
        assert_eq!(classify(3.5, 2.0).class, VehicleClass::LightDuty);
        assert_eq!(classify(3.2, 2.6).class, VehicleClass::MediumDuty);
        assert_eq!(classify(3.5, 3.0).class, VehicleClass::MediumDuty);
        assert_eq!(classify(12.0, 3.8).class, VehicleClass::HeavyDuty);
        assert!(!classify(12.0, 3.8).warning);
    }

    #[test]
    fn mixed_cases_carry_warning() {
        let tall_light = classify(2.8, 3.4);
        assert_eq!(tall_light.class, VehicleClass::MediumDuty);
        assert!(tall_light.warning);

        let low_heavy = classify(3.6, 2.8);
        assert_eq!(low_heavy.class, VehicleClass::HeavyDuty);
        assert!(low_heavy.warning);
    }

    #[test]
    fn non_positive_inputs_rejected() {
        for (g, h) in [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0), (f64::NAN, 2.0), (2.0, f64::INFINITY)] {
            assert!(classify_physical(&PhysicalSpec { gvm_tons: g, height_m: h }).is_err());
        }
    }

    #[test]
    fn class_names_parse_back() {
        for c in VehicleClass::ALL {
            assert_eq!(c.as_str().parse::<VehicleClass>().unwrap(), c);
            assert_eq!(VehicleClass::from_index(c.index()), Some(c));
        }
        assert_eq!("Light Duty".parse::<VehicleClass>().unwrap(), VehicleClass::LightDuty);
        assert!("bicycle".parse::<VehicleClass>().is_err());
    }

    #[test]
    fn lookup_is_normalized() {
        let reg = bundled_registry();
        assert_eq!(reg.lookup_model("Renault", "Kangoo").unwrap(), VehicleClass::LightDuty);
        assert_eq!(reg.lookup_model("  mercedes ", "SPRINTER").unwrap(), VehicleClass::MediumDuty);
        assert_eq!(reg.lookup_model("Volvo", "fh").unwrap(), VehicleClass::HeavyDuty);
        assert!(reg.lookup_model("Renault  D", "Wide").is_err());
        assert_eq!(reg.lookup_model("Renault", "D   Wide").unwrap(), VehicleClass::HeavyDuty);
        assert!(matches!(reg.lookup_model("Tesla", "Semi"), Err(Error::NotFound(_))));
    }

    #[test]
    fn empty_file_is_empty_registry() {
        let reg = Registry::parse("", Path::new("empty.tsv")).unwrap();
        assert!(reg.is_empty());
        assert!(reg.class_counts().is_empty());
    }

    #[test]
    fn duplicate_rejected() {
        let text = "make\tmodel\tclass\nRenault\tKangoo\tlight-duty\nrenault\t kangoo\tlight-duty\n";
        let err = Registry::parse(text, Path::new("dup.tsv")).unwrap_err();
        assert!(matches!(err, Error::Duplicate(ref m) if m.contains("line 2")), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "make\tmodel\tclass\n# comment\nRenault\tKangoo\tspaceship\n";
        match Registry::parse(text, Path::new("bad.tsv")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let missing_header = "Renault\tKangoo\tlight-duty\n";
        assert!(matches!(
            Registry::parse(missing_header, Path::new("h.tsv")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn spec_class_inconsistency_rejected() {
        let text = "make\tmodel\tclass\tgvm_tons\theight_m\nVolvo\tFH\tlight-duty\t18\t3.9\n";
        let err = Registry::parse(text, Path::new("x.tsv")).unwrap_err();
        assert!(err.to_string().contains("classify as heavy-duty"), "{err}");
    }

    #[test]
    fn half_spec_rejected() {
        let text = "make\tmodel\tclass\tgvm_tons\theight_m\nVolvo\tFH\theavy-duty\t18\t\n";
        assert!(Registry::parse(text, Path::new("x.tsv")).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let reg = bundled_registry();
        let again = Registry::parse(&reg.to_tsv(), Path::new("rt.tsv")).unwrap();
        assert_eq!(reg.entries(), again.entries());
    }

    #[test]
    fn bundled_registry_shape() {
        let counts = bundled_registry().class_counts();
        assert_eq!(counts.len(), 4);
        for (class, n) in counts {
            assert!((28..=32).contains(&n), "{class}: {n} models");
        }
    }
}
