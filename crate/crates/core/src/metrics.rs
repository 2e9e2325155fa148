//! Confusion matrices, pixel accuracy, mean accuracy, mean IU, frequency-weighted
//! IU, and object-level precision/recall.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::imgdata::LabelMap;

/// `counts[i][j]`: items of true class `i` predicted as class `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let n = class_names.len();
        Self {
            class_names,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn with_classes(n: usize) -> Self {
        Self::new((0..n).map(|i| i.to_string()).collect())
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let n = class_names.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(MetricsError::DimensionMismatch(counts.len(), n));
        }
        Ok(Self { class_names, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<(), MetricsError> {
        let n = self.n_classes();
        for class in [truth, predicted] {
            if class >= n {
                return Err(MetricsError::ClassOutOfRange { class, classes: n });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.n_classes() != self.n_classes() {
            return Err(MetricsError::DimensionMismatch(self.n_classes(), other.n_classes()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `t_i`, the number of items whose true class is `i`.
    pub fn truth_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Number of items predicted as class `j`.
    pub fn predicted_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    fn nonempty(&self) -> Result<(), MetricsError> {
        if self.total() == 0 {
            Err(MetricsError::Empty)
        } else {
            Ok(())
        }
    }

    /// `n_ii / t_i`, or `None` when the class never occurs in the truth.
    pub fn class_accuracy(&self, i: usize) -> Option<f64> {
        let t = self.truth_total(i);
        (t > 0).then(|| self.counts[i][i] as f64 / t as f64)
    }

    /// `n_ii / (t_i + sum_j n_ji - n_ii)`, or `None` when the class is absent from the truth.
    pub fn class_iu(&self, i: usize) -> Option<f64> {
        let t = self.truth_total(i);
        let nii = self.counts[i][i];
        (t > 0).then(|| nii as f64 / (t + self.predicted_total(i) - nii) as f64)
    }

    /// `n_ii / sum_j n_ji`, or `None` when nothing was predicted as `i`.
    pub fn class_precision(&self, i: usize) -> Option<f64> {
        let p = self.predicted_total(i);
        (p > 0).then(|| self.counts[i][i] as f64 / p as f64)
    }

    /// Comma-separated matrix with a header row of predicted class names.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\predicted");
        for name in &self.class_names {
            let _ = write!(s, ",{name}");
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_from_labels(truth: &LabelMap, predicted: &LabelMap, n_classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.dims() != predicted.dims() {
        return Err(MetricsError::DimensionMismatch(truth.data.len(), predicted.data.len()));
    }
    let mut cm = ConfusionMatrix::with_classes(n_classes);
    for (&t, &p) in truth.data.iter().zip(&predicted.data) {
        cm.add(t as usize, p as usize)?;
    }
    Ok(cm)
}

/// `sum_i n_ii / sum_i t_i`.
pub fn pixel_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.nonempty()?;
    Ok(cm.correct() as f64 / cm.total() as f64)
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let present: Vec<f64> = values.flatten().collect();
    present.iter().sum::<f64>() / present.len() as f64
}

/// Mean of `n_ii / t_i` over classes present in the truth.
pub fn mean_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.nonempty()?;
    Ok(mean_present((0..cm.n_classes()).map(|i| cm.class_accuracy(i))))
}

/// Mean intersection over union over classes present in the truth.
pub fn mean_iu(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.nonempty()?;
    Ok(mean_present((0..cm.n_classes()).map(|i| cm.class_iu(i))))
}

/// `(sum_k t_k)^-1 * sum_i t_i * IU_i`.
pub fn fw_iu(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.nonempty()?;
    let weighted: f64 = (0..cm.n_classes())
        .filter_map(|i| cm.class_iu(i).map(|iu| cm.truth_total(i) as f64 * iu))
        .sum();
    Ok(weighted / cm.total() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub pixel_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iu: f64,
    pub fw_iu: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub per_class_iu: Vec<Option<f64>>,
}

impl SegmentationMetrics {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self, MetricsError> {
        Ok(Self {
            pixel_accuracy: pixel_accuracy(cm)?,
            mean_accuracy: mean_accuracy(cm)?,
            mean_iu: mean_iu(cm)?,
            fw_iu: fw_iu(cm)?,
            per_class_accuracy: (0..cm.n_classes()).map(|i| cm.class_accuracy(i)).collect(),
            per_class_iu: (0..cm.n_classes()).map(|i| cm.class_iu(i)).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub confusion: ConfusionMatrix,
    /// `n_ii / t_i` per class.
    pub recall: Vec<Option<f64>>,
    /// `n_ii / sum_j n_ji` per class.
    pub precision: Vec<Option<f64>>,
    /// Correct over classified objects; not-segmented objects are left out.
    pub accuracy_excluding_not_segmented: f64,
    /// Correct over all objects; not-segmented objects count as errors.
    pub accuracy_counting_not_segmented: f64,
    pub not_segmented: u64,
    pub total_objects: u64,
}

/// Object-level report from `(truth, prediction)` pairs; `None` predictions are
/// not-segmented objects.
pub fn object_report(pairs: &[(usize, Option<usize>)], class_names: Vec<String>) -> Result<ObjectReport, MetricsError> {
    let mut cm = ConfusionMatrix::new(class_names);
    let mut not_segmented = 0;
    for &(truth, pred) in pairs {
        match pred {
            Some(p) => cm.add(truth, p)?,
            None => {
                if truth >= cm.n_classes() {
                    return Err(MetricsError::ClassOutOfRange {
                        class: truth,
                        classes: cm.n_classes(),
                    });
                }
                not_segmented += 1
            }
        }
    }
    Ok(report_from_confusion(cm, not_segmented))
}

pub fn report_from_confusion(cm: ConfusionMatrix, not_segmented: u64) -> ObjectReport {
    let counted = cm.total();
    let correct = cm.correct() as f64;
    let ratio = |den: u64| if den == 0 { 0.0 } else { correct / den as f64 };
    ObjectReport {
        recall: (0..cm.n_classes()).map(|i| cm.class_accuracy(i)).collect(),
        precision: (0..cm.n_classes()).map(|i| cm.class_precision(i)).collect(),
        accuracy_excluding_not_segmented: ratio(counted),
        accuracy_counting_not_segmented: ratio(counted + not_segmented),
        not_segmented,
        total_objects: counted + not_segmented,
        confusion: cm,
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

impl ObjectReport {
    /// Human-readable table: predicted classes as rows, true classes as columns,
    /// recall in the bottom row and precision in the right column.
    pub fn to_table(&self) -> String {
        let cm = &self.confusion;
        let n = cm.n_classes();
        let width = cm.class_names.iter().map(String::len).max().unwrap_or(0).max(10) + 2;
        let mut s = format!("{:<width$}", "pred\\true");
        for name in &cm.class_names {
            let _ = write!(s, "{name:>width$}");
        }
        let _ = writeln!(s, "{:>width$}", "precision");
        for j in 0..n {
            let _ = write!(s, "{:<width$}", cm.class_names[j]);
            for i in 0..n {
                let _ = write!(s, "{:>width$}", cm.counts[i][j]);
            }
            let _ = writeln!(s, "{:>width$}", pct(self.precision[j]));
        }
        let _ = write!(s, "{:<width$}", "recall");
        for r in &self.recall {
            let _ = write!(s, "{:>width$}", pct(*r));
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "accuracy (not-segmented excluded): {}",
            pct(Some(self.accuracy_excluding_not_segmented))
        );
        let _ = writeln!(
            s,
            "accuracy (not-segmented as errors): {}",
            pct(Some(self.accuracy_counting_not_segmented))
        );
        let _ = writeln!(s, "not-segmented objects: {} of {}", self.not_segmented, self.total_objects);
        s
    }
}
