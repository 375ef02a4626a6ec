//! Binary detection metrics with vulnerable (1) as the positive class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(predictions: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Rates as fractions in `[0, 1]`. Any `0/0` ratio is reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fnr: f64,
    pub fpr: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Metrics {
    let tp = cm.tp as f64;
    let fp = cm.fp as f64;
    let tn = cm.tn as f64;
    let fn_ = cm.fn_ as f64;
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    Metrics {
        fnr: ratio(fn_, tp + fn_),
        fpr: ratio(fp, fp + tn),
        recall,
        precision,
        f1: ratio(2.0 * precision * recall, precision + recall),
    }
}

/// Percentage with two decimals.
pub fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

pub const CSV_HEADER: &str = "method,source,target,FNR,FPR,Recall,Precision,F1,seed";

/// One results row: a method evaluated on a source→target pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub source: String,
    pub target: String,
    pub metrics: Metrics,
    /// Seed of the run, or `None` for a row aggregated over runs.
    pub seed: Option<u64>,
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            self.source,
            self.target,
            percent(m.fnr),
            percent(m.fpr),
            percent(m.recall),
            percent(m.precision),
            percent(m.f1),
            self.seed.map_or_else(|| "mean".to_owned(), |s| s.to_string()),
        )
    }
}

pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Aligned plain-text table of the same columns as the CSV.
pub struct Table<'a>(pub &'a [MetricsReport]);

impl fmt::Display for Table<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<String>> = std::iter::once(CSV_HEADER.split(',').map(str::to_owned).collect())
            .chain(self.0.iter().map(|r| r.csv_row().split(',').map(str::to_owned).collect()))
            .collect();
        let widths: Vec<usize> =
            (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| if c < 3 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            writeln!(f, "{}", cells.join("  ").trim_end())?;
        }
        Ok(())
    }
}

/// Mean and sample standard deviation of F1 across runs.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Element-wise mean of per-run metrics.
pub fn mean_metrics(runs: &[Metrics]) -> Metrics {
    let pick = |g: fn(&Metrics) -> f64| mean_std(&runs.iter().map(g).collect::<Vec<_>>()).0;
    Metrics {
        fnr: pick(|m| m.fnr),
        fpr: pick(|m| m.fpr),
        recall: pick(|m| m.recall),
        precision: pick(|m| m.precision),
        f1: pick(|m| m.f1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixture() {
        let cm = ConfusionMatrix { tp: 7, fn_: 1, fp: 1, tn: 91 };
        let m = compute_metrics(&cm);
        assert_eq!(
            [percent(m.fnr), percent(m.fpr), percent(m.recall), percent(m.precision), percent(m.f1)],
            ["12.50", "1.09", "87.50", "87.50", "87.50"]
        );
    }

    #[test]
    fn no_positive_predictions() {
        let m = compute_metrics(&ConfusionMatrix { tp: 0, fp: 0, tn: 5, fn_: 3 });
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.fnr, 1.0);
        assert_eq!(compute_metrics(&ConfusionMatrix::default()), Metrics::default());
    }

    #[test]
    fn length_mismatch() {
        assert!(confusion(&[1, 0], &[1]).is_err());
        assert_eq!(confusion(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap(), ConfusionMatrix { tp: 1, fp: 1, tn: 1, fn_: 1 });
    }

    #[test]
    fn csv_row_format() {
        let r = MetricsReport {
            method: "FULL".into(),
            source: "synth-a".into(),
            target: "synth-b".into(),
            metrics: compute_metrics(&ConfusionMatrix { tp: 7, fn_: 1, fp: 1, tn: 91 }),
            seed: Some(3),
        };
        assert_eq!(r.csv_row(), "FULL,synth-a,synth-b,12.50,1.09,87.50,87.50,87.50,3");
        assert!(to_csv(&[r.clone()]).starts_with(CSV_HEADER));
        let table = Table(&[r]).to_string();
        assert_eq!(table.lines().count(), 2);
    }

    #[test]
    fn spread() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    proptest! {
        #[test]
        fn rates_are_bounded(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
            let m = compute_metrics(&ConfusionMatrix { tp, fp, tn, fn_ });
            for v in [m.fnr, m.fpr, m.recall, m.precision, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if tp + fn_ > 0 {
                prop_assert!((m.fnr + m.recall - 1.0).abs() < 1e-12);
            }
        }
    }
}
