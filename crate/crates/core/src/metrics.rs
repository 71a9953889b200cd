//! Confusion matrices and the per-class / aggregate classification metrics.
//!
//! Rows are true classes, columns predicted classes. Any ratio whose
//! denominator is zero is reported as 0 and the event is listed in
//! [`MetricsReport::zero_division`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix rows must be square".into()));
        }
        Ok(ConfusionMatrix {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn update(&mut self, true_class: usize, predicted_class: usize) -> Result<()> {
        if true_class >= self.classes || predicted_class >= self.classes {
            return Err(Error::Contract(format!(
                "class pair ({true_class}, {predicted_class}) outside [0, {})",
                self.classes
            )));
        }
        self.counts[true_class * self.classes + predicted_class] += 1;
        Ok(())
    }

    pub fn get(&self, true_class: usize, predicted_class: usize) -> u64 {
        self.counts[true_class * self.classes + predicted_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// Element-wise sum with a matrix from another evaluator.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "cannot merge {0}x{0} into {1}x{1}",
                other.classes, self.classes
            )));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Each row divided by its total (all-zero rows stay zero).
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|t| {
                let total = self.row_sum(t);
                (0..self.classes)
                    .map(|p| if total == 0 { 0.0 } else { self.get(t, p) as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }

    /// CSV with a header row of predicted labels and one row per true label.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for t in 0..self.classes {
            out.push_str(labels.get(t).map_or("?", String::as_str));
            for p in 0..self.classes {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }
}

/// Element-wise mean of several matrices, as raw counts and as
/// row-normalized rates.
pub fn average_confusion(matrices: &[ConfusionMatrix]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Contract("no confusion matrices to average".into()))?;
    let c = first.classes;
    let k = matrices.len() as f64;
    let mut counts = vec![vec![0.0; c]; c];
    let mut rates = vec![vec![0.0; c]; c];
    for m in matrices {
        if m.classes != c {
            return Err(Error::Shape("confusion matrices differ in class count".into()));
        }
        let norm = m.row_normalized();
        for t in 0..c {
            for p in 0..c {
                counts[t][p] += m.get(t, p) as f64 / k;
                rates[t][p] += norm[t][p] / k;
            }
        }
    }
    Ok((counts, rates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// `"<metric>[<class>]"` for each value forced to 0 by a zero denominator.
    pub zero_division: Vec<String>,
}

fn ratio(num: u64, den: u64, what: &str, class: usize, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(format!("{what}[{class}]"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest metrics for every class plus accuracy and F1 aggregates.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("metrics of an empty confusion matrix".into()));
    }
    let mut flags = Vec::new();
    let mut per_class = Vec::with_capacity(cm.classes());
    for c in 0..cm.classes() {
        let tp = cm.get(c, c);
        let fn_ = cm.row_sum(c) - tp;
        let fp = cm.col_sum(c) - tp;
        let tn = total - tp - fn_ - fp;
        let precision = ratio(tp, tp + fp, "precision", c, &mut flags);
        let recall = ratio(tp, tp + fn_, "recall", c, &mut flags);
        let specificity = ratio(tn, tn + fp, "specificity", c, &mut flags);
        let f1 = if precision + recall == 0.0 {
            flags.push(format!("f1[{c}]"));
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            specificity,
            f1,
            support: tp + fn_,
        });
    }
    let mut report = MetricsReport {
        per_class,
        accuracy: cm.trace() as f64 / total as f64,
        macro_f1: 0.0,
        weighted_f1: 0.0,
        zero_division: flags,
    };
    (report.macro_f1, report.weighted_f1) = aggregate_f1(&report);
    Ok(report)
}

/// `(macro, weighted)` F1 of a report.
pub fn aggregate_f1(report: &MetricsReport) -> (f64, f64) {
    let f1: Vec<f64> = report.per_class.iter().map(|m| m.f1).collect();
    let support: Vec<u64> = report.per_class.iter().map(|m| m.support).collect();
    aggregate_f1_from(&f1, &support)
}

/// Unweighted and support-weighted means of per-class F1.
pub fn aggregate_f1_from(f1: &[f64], support: &[u64]) -> (f64, f64) {
    if f1.is_empty() {
        return (0.0, 0.0);
    }
    let macro_f1 = f1.iter().sum::<f64>() / f1.len() as f64;
    let total: u64 = support.iter().sum();
    let weighted = if total == 0 {
        0.0
    } else {
        f1.iter().zip(support).map(|(f, &s)| f * s as f64).sum::<f64>() / total as f64
    };
    (macro_f1, weighted)
}

impl MetricsReport {
    /// Fixed-width table, one row per class followed by the aggregates.
    pub fn to_table(&self, labels: &[String]) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>9} {:>11} {:>9} {:>8}\n",
            "class", "precision", "recall", "specificity", "f1", "support"
        );
        for (i, m) in self.per_class.iter().enumerate() {
            let name = labels.get(i).cloned().unwrap_or_else(|| i.to_string());
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>11.4} {:>9.4} {:>8}",
                name, m.precision, m.recall, m.specificity, m.f1, m.support
            );
        }
        let _ = writeln!(out, "accuracy     {:.4}", self.accuracy);
        let _ = writeln!(out, "macro f1     {:.4}", self.macro_f1);
        let _ = writeln!(out, "weighted f1  {:.4}", self.weighted_f1);
        out
    }
}
