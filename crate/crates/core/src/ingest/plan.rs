use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SourceKind;
use crate::error::{Error, Result};
use crate::taxonomy::{Registry, VehicleClass};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub make: String,
    pub model: String,
    pub vehicle_class: VehicleClass,
    pub source: SourceKind,
    pub query: String,
    pub target: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryPlan {
    pub entries: Vec<PlanEntry>,
}

impl QueryPlan {
    pub fn class_totals(&self) -> BTreeMap<VehicleClass, u64> {
        let mut totals = BTreeMap::new();
        for e in &self.entries {
            *totals.entry(e.vehicle_class).or_insert(0) += e.target;
        }
        totals
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(QueryPlan {
            entries: crate::jsonl::read(path)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::jsonl::write_atomic(path, &self.entries)
    }

    /// Every entry must name a registered model of the same class.
    pub fn check_against(&self, registry: &Registry) -> Result<()> {
        for e in &self.entries {
            let class = registry.lookup_model(&e.make, &e.model)?;
            if class != e.vehicle_class {
                return Err(Error::Plan(format!(
                    "plan entry {} {} says {} but the registry says {}",
                    e.make, e.model, e.vehicle_class, class
                )));
            }
        }
        Ok(())
    }
}

/// Fraction of each class's images to draw from each source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMix(pub BTreeMap<SourceKind, f64>);

impl SourceMix {
    pub fn single(kind: SourceKind) -> Self {
        SourceMix(BTreeMap::from([(kind, 1.0)]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Plan("source mix is empty".into()));
        }
        for (k, f) in &self.0 {
            if !(f.is_finite() && (0.0..=1.0).contains(f)) {
                return Err(Error::Plan(format!("fraction for {k} out of [0,1]: {f}")));
            }
        }
        let sum: f64 = self.0.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Plan(format!("source fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Split `total` across sources by largest remainder; ties go to the
    /// earlier source in enum order.
    fn allocate(&self, total: u64) -> Vec<(SourceKind, u64)> {
        let mut parts: Vec<(SourceKind, u64, f64)> = self
            .0
            .iter()
            .map(|(&k, &f)| {
                let exact = f * total as f64;
                let floor = exact.floor();
                (k, floor as u64, exact - floor)
            })
            .collect();
        let assigned: u64 = parts.iter().map(|p| p.1).sum();
        let mut left = total.saturating_sub(assigned);
        let mut order: Vec<usize> = (0..parts.len()).collect();
        order.sort_by(|&a, &b| parts[b].2.total_cmp(&parts[a].2).then(a.cmp(&b)));
        for i in order {
            if left == 0 {
                break;
            }
            parts[i].1 += 1;
            left -= 1;
        }
        parts.into_iter().map(|(k, n, _)| (k, n)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PlanRequest {
    pub per_class_target: u64,
    pub source_mix: SourceMix,
    /// Classes to plan for; `None` means all four.
    pub classes: Option<Vec<VehicleClass>>,
}

impl PlanRequest {
    pub fn new(per_class_target: u64, source_mix: SourceMix) -> Self {
        PlanRequest {
            per_class_target,
            source_mix,
            classes: None,
        }
    }
}

fn query_for(make: &str, model: &str, terms: &[String], source: SourceKind) -> String {
    let base = format!("{} {}", make.trim(), model.trim());
    match source {
        SourceKind::SearchEngine => match terms.first() {
            Some(t) => format!("{base} {t}"),
            None => base,
        },
        SourceKind::CadRender => format!("{base} 3d model"),
        SourceKind::LocalFolder => base,
    }
}

/// Split each class's target across sources, then evenly across that class's
/// models; remainders go to the first models in sorted (make, model) order.
/// Entries with a zero target are omitted.
pub fn build_query_plan(registry: &Registry, request: &PlanRequest) -> Result<QueryPlan> {
    request.source_mix.validate()?;
    let classes = request
        .classes
        .clone()
        .unwrap_or_else(|| VehicleClass::ALL.to_vec());
    let mut entries = Vec::new();
    for class in classes {
        // registry entries are already sorted by normalized (make, model)
        let models: Vec<_> = registry.models_of(class).collect();
        if models.is_empty() {
            return Err(Error::Plan(format!("class {class} has no registered models")));
        }
        let n = models.len() as u64;
        for (source, source_total) in request.source_mix.allocate(request.per_class_target) {
            let (base, remainder) = (source_total / n, source_total % n);
            for (i, m) in models.iter().enumerate() {
                let target = base + u64::from((i as u64) < remainder);
                if target == 0 {
                    continue;
                }
                entries.push(PlanEntry {
                    make: m.make.clone(),
                    model: m.model.clone(),
                    vehicle_class: class,
                    source,
                    query: query_for(&m.make, &m.model, &m.query_terms, source),
                    target,
                });
            }
        }
    }
    Ok(QueryPlan { entries })
}
