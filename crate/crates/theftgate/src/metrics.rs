//! Confusion accounting and the evaluation metrics used by the detector and
//! target-classifier stages.
//!
//! Detection uses two rates with malicious as the positive class:
//!
//! - [`for_rate`] — malicious records predicted benign over total malicious
//!   records (the detector's miss rate);
//! - [`fpr_rate`] — benign records predicted malicious over total malicious
//!   *predictions* (the fraction of alarms that are false).
//!
//! Note the second denominator: `fp / (tp + fp)` is a false-discovery-style
//! rate, not the textbook FPR. Both are implemented exactly as named here,
//! and the conventional benign-denominator rate is exposed separately as
//! [`fpr_benign`] so reports stay unambiguous.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: denominator {0} is zero")]
    Undefined(&'static str),
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("class count mismatch: {got} classes, matrix of size {want}")]
    ShapeMismatch { got: usize, want: usize },
}

/// Binary confusion counts; malicious is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    /// Accumulates counts from parallel-ready label/prediction pairs
    /// (0 = benign, nonzero = malicious).
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> ConfusionCounts {
        assert_eq!(truth.len(), predicted.len());
        let mut c = ConfusionCounts::default();
        for (&y, &p) in truth.iter().zip(predicted) {
            match (y != 0, p != 0) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_neg += 1,
                (false, true) => c.false_pos += 1,
                (false, false) => c.true_neg += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// Associative merge of partial counts.
    pub fn merge(self, other: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            true_pos: self.true_pos + other.true_pos,
            false_pos: self.false_pos + other.false_pos,
            true_neg: self.true_neg + other.true_neg,
            false_neg: self.false_neg + other.false_neg,
        }
    }
}

/// Miss rate: `fn / (tp + fn)` — malicious records predicted benign over
/// total malicious records.
pub fn for_rate(c: &ConfusionCounts) -> Result<f64, MetricError> {
    let denom = c.true_pos + c.false_neg;
    if denom == 0 {
        return Err(MetricError::Undefined("tp + fn"));
    }
    Ok(c.false_neg as f64 / denom as f64)
}

/// Alarm imprecision: `fp / (tp + fp)` — benign records predicted malicious
/// over total malicious predictions.
pub fn fpr_rate(c: &ConfusionCounts) -> Result<f64, MetricError> {
    let denom = c.true_pos + c.false_pos;
    if denom == 0 {
        return Err(MetricError::Undefined("tp + fp"));
    }
    Ok(c.false_pos as f64 / denom as f64)
}

/// Standard false-negative rate. Identical formula to [`for_rate`]; exposed
/// under the conventional name.
pub fn false_negative_rate(c: &ConfusionCounts) -> Result<f64, MetricError> {
    for_rate(c)
}

/// Conventional false positive rate with the benign denominator:
/// `fp / (fp + tn)`.
pub fn fpr_benign(c: &ConfusionCounts) -> Result<f64, MetricError> {
    let denom = c.false_pos + c.true_neg;
    if denom == 0 {
        return Err(MetricError::Undefined("fp + tn"));
    }
    Ok(c.false_pos as f64 / denom as f64)
}

/// Square multi-class confusion matrix. Rows are true classes, columns are
/// predicted classes; row sums are the per-class supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiClassConfusion {
    pub classes: Vec<String>,
    counts: Vec<u64>,
}

impl MultiClassConfusion {
    pub fn new(classes: Vec<String>) -> MultiClassConfusion {
        let k = classes.len();
        MultiClassConfusion {
            classes,
            counts: vec![0; k * k],
        }
    }

    pub fn from_predictions(
        classes: Vec<String>,
        truth: &[usize],
        predicted: &[usize],
    ) -> MultiClassConfusion {
        assert_eq!(truth.len(), predicted.len());
        let mut m = MultiClassConfusion::new(classes);
        for (&y, &p) in truth.iter().zip(predicted) {
            m.record(y, p);
        }
        m
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        let k = self.classes.len();
        self.counts[truth * k + predicted] += 1;
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes.len() + predicted]
    }

    pub fn support(&self, class: usize) -> u64 {
        let k = self.classes.len();
        self.counts[class * k..(class + 1) * k].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Associative merge of partial matrices (classes must match).
    pub fn merge(mut self, other: &MultiClassConfusion) -> MultiClassConfusion {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassF1>,
    /// Unweighted mean F1 over classes with support > 0.
    pub macro_f1: f64,
}

/// Per-class F1 (`2PR/(P+R)`, with an undefined precision or recall treated
/// as 0) and the macro average over classes that actually have support.
pub fn f1_report(m: &MultiClassConfusion) -> Result<F1Report, MetricError> {
    if m.total() == 0 {
        return Err(MetricError::EmptyConfusion);
    }
    let k = m.classes.len();
    let mut per_class = Vec::with_capacity(k);
    let mut macro_sum = 0.0;
    let mut macro_n = 0u64;
    for c in 0..k {
        let tp = m.count(c, c);
        let support = m.support(c);
        let predicted: u64 = (0..k).map(|r| m.count(r, c)).sum();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 {
            0.0
        } else {
            tp as f64 / support as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if support > 0 {
            macro_sum += f1;
            macro_n += 1;
        }
        per_class.push(ClassF1 {
            class: m.classes[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    if macro_n == 0 {
        return Err(MetricError::EmptyConfusion);
    }
    Ok(F1Report {
        per_class,
        macro_f1: macro_sum / macro_n as f64,
    })
}

/// Detection-stage rates bundled for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub counts: ConfusionCounts,
    /// Miss rate `fn/(tp+fn)`.
    pub for_rate: f64,
    /// Alarm imprecision `fp/(tp+fp)`.
    pub fpr_rate: f64,
    /// Same value as `for_rate` under its conventional name.
    pub false_negative_rate: f64,
    /// Conventional `fp/(fp+tn)`.
    pub fpr_benign: Option<f64>,
}

impl DetectionReport {
    pub fn from_counts(c: ConfusionCounts) -> Result<DetectionReport, MetricError> {
        Ok(DetectionReport {
            counts: c,
            for_rate: for_rate(&c)?,
            fpr_rate: fpr_rate(&c)?,
            false_negative_rate: false_negative_rate(&c)?,
            fpr_benign: fpr_benign(&c).ok(),
        })
    }
}

/// Run metadata attached to every emitted report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub train_fraction: Option<f64>,
    pub detector: Option<String>,
    pub classifier: Option<String>,
    pub detector_features: Vec<String>,
    pub target_features: Vec<String>,
    pub hyperparams: Option<serde_json::Value>,
}

/// The `report.json` payload: detection rates, gated target-classification
/// F1, end-to-end F1 over ground-truth-malicious rows, and run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub stage1: DetectionReport,
    /// F1 over rows the detector flagged malicious (the cascade view).
    pub stage2_gated: Option<F1Report>,
    /// F1 over all ground-truth-malicious rows; detector misses count
    /// against recall.
    pub end_to_end: Option<F1Report>,
    pub meta: ReportMeta,
}

impl EvaluationReport {
    pub fn save_json(&self, path: &Path) -> std::io::Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(w, self).map_err(std::io::Error::other)
    }

    pub fn load_json(path: &Path) -> std::io::Result<EvaluationReport> {
        let r = BufReader::new(File::open(path)?);
        serde_json::from_reader(r).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, tn: u64, fneg: u64) -> ConfusionCounts {
        ConfusionCounts {
            true_pos: tp,
            false_pos: fp,
            true_neg: tn,
            false_neg: fneg,
        }
    }

    #[test]
    fn for_rate_examples() {
        assert_eq!(for_rate(&counts(100, 0, 0, 0)).unwrap(), 0.0);
        assert_eq!(for_rate(&counts(90, 0, 0, 10)).unwrap(), 0.1);
        assert_eq!(
            for_rate(&counts(0, 3, 5, 0)),
            Err(MetricError::Undefined("tp + fn"))
        );
    }

    #[test]
    fn fpr_rate_examples() {
        assert_eq!(fpr_rate(&counts(50, 0, 0, 0)).unwrap(), 0.0);
        assert_eq!(fpr_rate(&counts(49, 1, 0, 0)).unwrap(), 0.02);
        assert_eq!(
            fpr_rate(&counts(0, 0, 5, 3)),
            Err(MetricError::Undefined("tp + fp"))
        );
    }

    #[test]
    fn for_rate_is_recall_complement() {
        for (tp, fneg) in [(90, 10), (1, 0), (3, 7), (1234, 55)] {
            let c = counts(tp, 4, 9, fneg);
            let recall = tp as f64 / (tp + fneg) as f64;
            assert_eq!(for_rate(&c).unwrap() + recall, 1.0);
        }
    }

    #[test]
    fn f1_report_perfect_diagonal() {
        let mut m = MultiClassConfusion::new(vec!["a".into(), "b".into(), "c".into()]);
        m.record(0, 0);
        m.record(1, 1);
        m.record(2, 2);
        let r = f1_report(&m).unwrap();
        assert!(r.per_class.iter().all(|c| c.f1 == 1.0));
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn f1_report_hand_computed_two_class() {
        // [[8,2],[1,9]]: F1(class0)=16/19, F1(class1)=6/7, macro=113/133.
        let mut m = MultiClassConfusion::new(vec!["0".into(), "1".into()]);
        for _ in 0..8 {
            m.record(0, 0);
        }
        for _ in 0..2 {
            m.record(0, 1);
        }
        m.record(1, 0);
        for _ in 0..9 {
            m.record(1, 1);
        }
        let r = f1_report(&m).unwrap();
        assert!((r.per_class[0].f1 - 16.0 / 19.0).abs() < 1e-12);
        assert!((r.per_class[1].f1 - 6.0 / 7.0).abs() < 1e-12);
        assert!((r.macro_f1 - 113.0 / 133.0).abs() < 1e-12);
        assert_eq!(r.per_class[0].support, 10);
        assert_eq!(r.per_class[1].support, 10);
    }

    #[test]
    fn zero_support_classes_are_excluded_from_macro() {
        let mut m = MultiClassConfusion::new(vec!["a".into(), "b".into(), "ghost".into()]);
        for _ in 0..5 {
            m.record(0, 0);
        }
        m.record(1, 0);
        m.record(1, 1);
        let r = f1_report(&m).unwrap();
        assert_eq!(r.per_class[2].support, 0);
        let f1_a = r.per_class[0].f1;
        let f1_b = r.per_class[1].f1;
        assert!((r.macro_f1 - (f1_a + f1_b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_invariant_under_class_permutation() {
        let truth = [0usize, 1, 2, 2, 1, 0, 2, 1];
        let pred = [0usize, 2, 2, 1, 1, 0, 2, 0];
        let names = ["a", "b", "c"];
        let m = MultiClassConfusion::from_predictions(
            names.iter().map(|s| s.to_string()).collect(),
            &truth,
            &pred,
        );
        let base = f1_report(&m).unwrap().macro_f1;
        // Permute class indices 0→2, 1→0, 2→1.
        let perm = [2usize, 0, 1];
        let truth_p: Vec<usize> = truth.iter().map(|&y| perm[y]).collect();
        let pred_p: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let names_p = ["b", "c", "a"];
        let mp = MultiClassConfusion::from_predictions(
            names_p.iter().map(|s| s.to_string()).collect(),
            &truth_p,
            &pred_p,
        );
        assert!((f1_report(&mp).unwrap().macro_f1 - base).abs() < 1e-12);
    }

    #[test]
    fn empty_confusion_is_an_error() {
        let m = MultiClassConfusion::new(vec!["a".into()]);
        assert_eq!(f1_report(&m), Err(MetricError::EmptyConfusion));
    }

    #[test]
    fn rates_stay_in_unit_interval() {
        for tp in 0..4u64 {
            for fp in 0..4u64 {
                for tn in 0..4u64 {
                    for fneg in 0..4u64 {
                        let c = counts(tp, fp, tn, fneg);
                        if let Ok(v) = for_rate(&c) {
                            assert!((0.0..=1.0).contains(&v));
                        }
                        if let Ok(v) = fpr_rate(&c) {
                            assert!((0.0..=1.0).contains(&v));
                        }
                        if let Ok(v) = fpr_benign(&c) {
                            assert!((0.0..=1.0).contains(&v));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn report_json_round_trips() {
        let report = EvaluationReport {
            stage1: DetectionReport::from_counts(counts(90, 2, 900, 10)).unwrap(),
            stage2_gated: None,
            end_to_end: None,
            meta: ReportMeta {
                seed: 7,
                ..ReportMeta::default()
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.save_json(&path).unwrap();
        let loaded = EvaluationReport::load_json(&path).unwrap();
        assert_eq!(report, loaded);
    }
}
