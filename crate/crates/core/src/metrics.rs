//! Classification metrics from a confusion matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples whose true label is this class.
    pub support: u64,
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn confusion_matrix(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if labels.len() != predictions.len() {
        return Err(Error::Contract(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in labels.iter().zip(predictions) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Data(format!("class id out of range 0..{num_classes}: {t} / {p}")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

impl MetricsReport {
    /// Macro averages run over the classes that occur as a label or as a
    /// prediction; a class with no predictions has precision 0.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let k = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
                let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp / support as f64 };
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    support,
                    predicted,
                }
            })
            .collect();
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support + m.predicted > 0).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if present.is_empty() {
                0.0
            } else {
                present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
            }
        };
        MetricsReport {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            confusion,
        }
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        Ok(Self::from_confusion(confusion_matrix(labels, predictions, num_classes)?))
    }

    pub fn num_samples(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// Index of the largest entry of each row of an `(n, k)` matrix; the first
/// maximum wins ties.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape().sample_len();
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
