//! Confusion matrices and the accuracy / precision / recall / f1 family.
//!
//! Zero-division convention: a class that is never predicted has precision
//! 0; a class with no true samples has recall 0; f1 is 0 whenever
//! precision + recall is 0.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class index {index} outside {n_classes} classes")]
    LabelOutOfRange { index: usize, n_classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    /// Builds from a row-major `n × n` table.
    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), n_classes * n_classes);
        ConfusionMatrix { n_classes, counts }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }

    /// Samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(c, p)).sum()
    }

    /// Samples predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, c)).sum()
    }
}

pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        for index in [p, t] {
            if index >= n_classes {
                return Err(MetricsError::LabelOutOfRange { index, n_classes });
            }
        }
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Support-weighted mean of per-class f1.
    pub weighted_f1: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let per_class: Vec<ClassMetrics> = (0..cm.n_classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, cm.support(c));
            ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.support(c),
            }
        })
        .collect();
    let weighted_f1 = per_class
        .iter()
        .map(|m| m.f1 * m.support as f64)
        .sum::<f64>()
        / total as f64;
    Ok(MetricsReport {
        accuracy: ratio(cm.trace(), total),
        per_class,
        weighted_f1,
        total,
    })
}
