//! Confusion matrix and accuracy for clip-level action classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{ActionLabel, LabelSet};

#[derive(Debug, Error, PartialEq)]
pub enum ClassificationError {
    #[error("{gt} ground truth labels but {pred} predictions")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("confusion matrix must be {k}x{k}")]
    NotSquare { k: usize },
    #[error("confusion matrix is all zeros")]
    Empty,
}

/// Rows are true labels, columns predicted labels, both in label-set order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<ActionLabel>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: &LabelSet) -> Self {
        let k = labels.len();
        ConfusionMatrix { labels: labels.labels().to_vec(), counts: vec![vec![0; k]; k] }
    }

    pub fn from_counts(labels: &LabelSet, counts: Vec<Vec<u64>>) -> Result<Self, ClassificationError> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(ClassificationError::NotSquare { k });
        }
        Ok(ConfusionMatrix { labels: labels.labels().to_vec(), counts })
    }

    pub fn labels(&self) -> &[ActionLabel] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Recall of each true class; `None` for classes with no examples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect()
    }

    /// Micro accuracy, trace / total.
    pub fn overall_accuracy(&self) -> Result<f64, ClassificationError> {
        match self.total() {
            0 => Err(ClassificationError::Empty),
            n => Ok(self.trace() as f64 / n as f64),
        }
    }

    /// Unweighted mean of the defined per-class accuracies.
    pub fn macro_accuracy(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class_accuracy().into_iter().flatten().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// Expand back into (truth, prediction) label pairs, row-major.
    pub fn to_label_pairs(&self) -> Vec<(ActionLabel, ActionLabel)> {
        let mut out = Vec::with_capacity(self.total() as usize);
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    out.push((self.labels[i].clone(), self.labels[j].clone()));
                }
            }
        }
        out
    }
}

/// Count (truth, prediction) pairs.
pub fn confusion<S: AsRef<str>, T: AsRef<str>>(
    gt: &[S],
    pred: &[T],
    labels: &LabelSet,
) -> Result<ConfusionMatrix, ClassificationError> {
    if gt.len() != pred.len() {
        return Err(ClassificationError::LengthMismatch { gt: gt.len(), pred: pred.len() });
    }
    let index = |s: &str| labels.index_of(s).ok_or_else(|| ClassificationError::UnknownLabel(s.to_string()));
    let mut cm = ConfusionMatrix::zeros(labels);
    for (g, p) in gt.iter().zip(pred) {
        let (i, j) = (index(g.as_ref())?, index(p.as_ref())?);
        cm.counts[i][j] += 1;
    }
    Ok(cm)
}

/// Index of the highest score; ties go to the earlier label.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub label: String,
    pub counts: Vec<u64>,
    pub videos: u64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub labels: Vec<String>,
    pub classes: Vec<ClassReport>,
    pub total: u64,
    /// trace / total
    pub micro_accuracy: Option<f64>,
    /// mean of per-class accuracies
    pub macro_accuracy: Option<f64>,
}

impl ClassificationReport {
    pub fn new(cm: &ConfusionMatrix) -> Self {
        let per_class = cm.per_class_accuracy();
        let sums = cm.row_sums();
        ClassificationReport {
            labels: cm.labels().iter().map(|l| l.to_string()).collect(),
            classes: cm
                .labels()
                .iter()
                .enumerate()
                .map(|(i, l)| ClassReport {
                    label: l.to_string(),
                    counts: cm.counts()[i].clone(),
                    videos: sums[i],
                    accuracy: per_class[i],
                })
                .collect(),
            total: cm.total(),
            micro_accuracy: cm.overall_accuracy().ok(),
            macro_accuracy: cm.macro_accuracy(),
        }
    }

    /// Table with one row per true label: counts, row total, accuracy.
    pub fn render_table(&self) -> String {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(8);
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |a| format!("{:.1}%", 100.0 * a));
        let mut out = format!("{:<width$}", "");
        for l in &self.labels {
            out.push_str(&format!(" {l:>width$}"));
        }
        out.push_str(&format!(" {:>10} {:>9}\n", "No. videos", "Accuracy"));
        for c in &self.classes {
            out.push_str(&format!("{:<width$}", c.label));
            for n in &c.counts {
                out.push_str(&format!(" {n:>width$}"));
            }
            out.push_str(&format!(" {:>10} {:>9}\n", c.videos, pct(c.accuracy)));
        }
        out.push_str(&format!("micro accuracy (trace/total): {}\n", pct(self.micro_accuracy)));
        out.push_str(&format!("macro accuracy (class mean):  {}\n", pct(self.macro_accuracy)));
        out
    }
}
