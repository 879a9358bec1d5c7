//! Accuracy, confusion matrices and per-class rates over the test split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::learner::{ClassifierHead, FeatureStore};
use crate::taxonomy::VehicleClass;

const K: usize = VehicleClass::COUNT;

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= K || predicted >= K {
            return Err(Error::Validation(format!(
                "label pair ({truth}, {predicted}) outside 0..{K}"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// `None` on an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Each row divided by its sum. Rows without samples stay all-zero;
    /// see [`ConfusionMatrix::empty_rows`].
    pub fn normalized(&self) -> [[f64; K]; K] {
        let mut out = [[0.0; K]; K];
        for (i, row) in self.counts.iter().enumerate() {
            let n = self.row_total(i);
            if n > 0 {
                for (j, &c) in row.iter().enumerate() {
                    out[i][j] = c as f64 / n as f64;
                }
            }
        }
        out
    }

    pub fn empty_rows(&self) -> Vec<VehicleClass> {
        (0..K)
            .filter(|&i| self.row_total(i) == 0)
            .filter_map(VehicleClass::from_index)
            .collect()
    }

    pub fn recall(&self, i: usize) -> Option<f64> {
        let n = self.row_total(i);
        (n > 0).then(|| self.counts[i][i] as f64 / n as f64)
    }

    pub fn precision(&self, j: usize) -> Option<f64> {
        let n = self.column_total(j);
        (n > 0).then(|| self.counts[j][j] as f64 / n as f64)
    }
}

pub fn confusion_matrix(pairs: &[(usize, usize)]) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new();
    for &(t, p) in pairs {
        m.add(t, p)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub class: VehicleClass,
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_size: u64,
    /// `None` when the test set is empty.
    pub accuracy: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub normalized: [[f64; K]; K],
    pub empty_rows: Vec<VehicleClass>,
    pub elapsed_seconds: f64,
    /// Not part of the confusion grid.
    pub per_class: Vec<ClassRates>,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, elapsed_seconds: f64) -> Self {
        let per_class = VehicleClass::ALL
            .iter()
            .map(|&class| {
                let i = class.index();
                ClassRates {
                    class,
                    support: confusion.row_total(i),
                    precision: confusion.precision(i),
                    recall: confusion.recall(i),
                }
            })
            .collect();
        EvalReport {
            test_size: confusion.total(),
            accuracy: confusion.accuracy(),
            normalized: confusion.normalized(),
            empty_rows: confusion.empty_rows(),
            confusion,
            elapsed_seconds,
            per_class,
        }
    }

    /// Field-wise equality with floats compared to `tol` absolute.
    pub fn approx_eq(&self, other: &EvalReport, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= tol;
        let close_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => close(a, b),
            (None, None) => true,
            _ => false,
        };
        self.test_size == other.test_size
            && self.confusion == other.confusion
            && self.empty_rows == other.empty_rows
            && close_opt(self.accuracy, other.accuracy)
            && close(self.elapsed_seconds, other.elapsed_seconds)
            && self
                .normalized
                .iter()
                .flatten()
                .zip(other.normalized.iter().flatten())
                .all(|(a, b)| close(*a, *b))
            && self.per_class.len() == other.per_class.len()
            && self.per_class.iter().zip(&other.per_class).all(|(a, b)| {
                a.class == b.class
                    && a.support == b.support
                    && close_opt(a.precision, b.precision)
                    && close_opt(a.recall, b.recall)
            })
    }
}

/// Predict every `Test` entry of `splits` and tally the results.
pub fn evaluate(
    head: &ClassifierHead,
    store: &FeatureStore,
    splits: &BTreeMap<ContentHash, Split>,
) -> Result<EvalReport> {
    let started = Instant::now();
    if head.input_dim() != store.dim {
        return Err(Error::Shape {
            expected: head.input_dim(),
            found: store.dim,
        });
    }
    let test: Vec<&ContentHash> = splits
        .iter()
        .filter(|(_, s)| **s == Split::Test)
        .map(|(h, _)| h)
        .collect();
    let index: std::collections::HashMap<&ContentHash, usize> = store
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (&r.content_hash, i))
        .collect();
    let missing: Vec<String> = test
        .iter()
        .filter(|h| !index.contains_key(*h))
        .map(|h| h.to_hex())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Evaluation(format!(
            "{} test entries have no feature row: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let mut confusion = ConfusionMatrix::new();
    let mut x = vec![0.0; store.dim];
    for h in test {
        let row = &store.rows[index[h]];
        for (dst, &v) in x.iter_mut().zip(&row.values) {
            *dst = f64::from(v);
        }
        let predicted = head.predict(&x)?.class.index();
        confusion.add(row.label as usize, predicted)?;
    }
    Ok(EvalReport::from_confusion(
        confusion,
        started.elapsed().as_secs_f64(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Validation(format!(
                "unknown report format {other:?} (expected text, csv or json)"
            ))),
        }
    }
}

/// Fraction as a percentage with two decimals, ties to even.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}", (fraction * 10_000.0).round_ties_even() / 100.0)
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

pub fn parse_json_report(text: &str) -> Result<EvalReport> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("eval report: {e}")))
}

fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let Some(accuracy) = report.accuracy else {
        out.push_str("no data: the test set is empty\n");
        return out;
    };
    let _ = writeln!(out, "Test size: {}", report.test_size);
    let _ = writeln!(out, "Accuracy: {}%", percent(accuracy));
    let _ = writeln!(out, "Evaluation time: {:.3} s", report.elapsed_seconds);
    out.push('\n');
    out.push_str("Normalized confusion matrix (%)\n");
    let label_w = VehicleClass::ALL
        .iter()
        .map(|c| c.display_name().len())
        .max()
        .unwrap_or(0)
        .max("True label".len());
    let col_w = label_w.max(8);
    let _ = writeln!(out, "{:label_w$}  Predicted label", "");
    let _ = write!(out, "{:<label_w$}", "True label");
    for c in VehicleClass::ALL {
        let _ = write!(out, "  {:>col_w$}", c.display_name());
    }
    out.push('\n');
    for (i, c) in VehicleClass::ALL.iter().enumerate() {
        let _ = write!(out, "{:<label_w$}", c.display_name());
        if report.confusion.row_total(i) == 0 {
            let _ = write!(out, "  {:>col_w$}", "no data");
        } else {
            for v in report.normalized[i] {
                let _ = write!(out, "  {:>col_w$}", percent(v));
            }
        }
        out.push('\n');
    }
    out.push('\n');
    out.push_str("Per-class rates (%)\n");
    let _ = writeln!(
        out,
        "{:<label_w$}  {:>9}  {:>9}  {:>7}",
        "Class", "precision", "recall", "support"
    );
    let show = |v: Option<f64>| v.map(percent).unwrap_or_else(|| "-".into());
    for r in &report.per_class {
        let _ = writeln!(
            out,
            "{:<label_w$}  {:>9}  {:>9}  {:>7}",
            r.class.display_name(),
            show(r.precision),
            show(r.recall),
            r.support
        );
    }
    out
}

fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("true_label,predicted_label,count,fraction\n");
    for t in VehicleClass::ALL {
        for p in VehicleClass::ALL {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                t.as_str(),
                p.as_str(),
                report.confusion.counts[t.index()][p.index()],
                report.normalized[t.index()][p.index()]
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_and_half_row() {
        let m = confusion_matrix(&[(0, 0), (0, 1)]).unwrap();
        assert_eq!(m.normalized()[0], [0.5, 0.5, 0.0, 0.0]);
        assert_eq!(m.empty_rows().len(), 3);
    }

    #[test]
    fn empty_input() {
        let m = confusion_matrix(&[]).unwrap();
        assert_eq!(m.total(), 0);
        assert_eq!(m.accuracy(), None);
        assert_eq!(m.empty_rows(), VehicleClass::ALL.to_vec());
        let text = render_report(&EvalReport::from_confusion(m, 0.0), ReportFormat::Text);
        assert!(text.contains("no data"));
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(confusion_matrix(&[(4, 0)]), Err(Error::Validation(_))));
        assert!(matches!(confusion_matrix(&[(0, 9)]), Err(Error::Validation(_))));
    }

    #[test]
    fn constant_prediction_on_balanced_data() {
        let pairs: Vec<_> = (0..40).map(|i| (i % 4, 0)).collect();
        let m = confusion_matrix(&pairs).unwrap();
        assert_eq!(m.accuracy(), Some(0.25));
        assert_eq!(m.precision(0), Some(0.25));
        assert_eq!(m.precision(1), None);
    }

    #[test]
    fn percent_rounds_half_even() {
        assert_eq!(percent(0.94105), "94.10");
        assert_eq!(percent(0.125), "12.50");
        assert_eq!(percent(0.5), "50.00");
        assert_eq!(percent(1.0 / 3.0), "33.33");
    }

    #[test]
    fn text_grid_has_headers() {
        let pairs: Vec<_> = (0..40).map(|i| (i % 4, i % 4)).collect();
        let r = EvalReport::from_confusion(confusion_matrix(&pairs).unwrap(), 0.0);
        let t = render_report(&r, ReportFormat::Text);
        assert!(t.contains("True label") && t.contains("Predicted label"));
        assert!(t.contains("Non logistic"));
        assert!(t.contains("100.00"));
        assert!(t.contains("Accuracy: 100.00%"));
    }

    #[test]
    fn unknown_format() {
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!("JSON".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
    }
}
