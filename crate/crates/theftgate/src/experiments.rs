//! Experiment harness: stratified splitting, progressive-learning curves,
//! class-conditional density profiles, and convergence-curve export.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::featsel::SelectionTrace;
use crate::ingest::{FeatureFrame, FrameError, Labels, RowLabel};
use crate::learners::{predict, HyperParams, LearnError, LearnerKind};
use crate::metrics::{for_rate, ConfusionCounts, MetricError};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("train fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("fraction grid must be ascending with every entry in (0, 1)")]
    BadGrid,
    #[error("no user frames given")]
    NoUsers,
    #[error("row {0} is unlabeled")]
    Unlabeled(usize),
    #[error("unknown feature: {0}")]
    UnknownFeature(String),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("learn: {0}")]
    Learn(#[from] LearnError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Result of a stratified split. Index vectors refer to rows of the input
/// frame, ascending within each half.
pub struct SplitOutcome {
    pub train: FeatureFrame,
    pub test: FeatureFrame,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Strata of size 1, which go wholly to train.
    pub singleton_strata: Vec<String>,
}

fn stratum_key(frame: &FeatureFrame, row: usize) -> (String, u8) {
    let class = match frame.label(row) {
        None => 255,
        Some(RowLabel::Benign) => 0,
        Some(RowLabel::Malicious(t)) => 1 + t.index() as u8,
    };
    (frame.user(row).to_string(), class)
}

/// Splits so that within every (user × class) stratum the train share equals
/// `train_fraction` within ±1 row. Halves are disjoint and exhaustive.
pub fn stratified_split(
    frame: &FeatureFrame,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitOutcome, ExperimentError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ExperimentError::BadFraction(train_fraction));
    }
    let mut strata: BTreeMap<(String, u8), Vec<usize>> = BTreeMap::new();
    for row in 0..frame.n_rows() {
        strata.entry(stratum_key(frame, row)).or_default().push(row);
    }
    let mut rng = rng_for(seed, 0x5111);
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    let mut singleton_strata = Vec::new();
    for ((user, class), mut rows) in strata {
        if rows.len() == 1 {
            singleton_strata.push(format!("{user}/{class}"));
            train_indices.push(rows[0]);
            continue;
        }
        rows.shuffle(&mut rng);
        let k = ((train_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len());
        train_indices.extend_from_slice(&rows[..k]);
        test_indices.extend_from_slice(&rows[k..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitOutcome {
        train: frame.take_rows(&train_indices),
        test: frame.take_rows(&test_indices),
        train_indices,
        test_indices,
        singleton_strata,
    })
}

/// Labels projected onto a row-index subset.
pub fn labels_for(labels: &Labels, indices: &[usize]) -> Labels {
    Labels {
        ids: indices.iter().map(|&i| labels.ids[i]).collect(),
        classes: labels.classes.clone(),
    }
}

/// One point of the progressive-learning curve.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProgressivePoint {
    pub user_count: usize,
    /// First grid fraction whose detector met the threshold, if any.
    pub min_fraction: Option<f64>,
    /// The miss rate that fraction achieved.
    pub achieved_for: Option<f64>,
}

/// Default scan grid: 0.10 to 0.90 in steps of 0.025.
pub fn default_fraction_grid() -> Vec<f64> {
    (4..=36).map(|i| i as f64 * 0.025).collect()
}

/// For each prefix of the user list, pools those users' rows, holds out a
/// stratified 25% test split, and scans the fraction grid ascending for the
/// smallest fraction of the training pool that trains a detector to
/// `FOR <= threshold` on the held-out split.
pub fn progressive_learning(
    user_frames: &[FeatureFrame],
    detector: LearnerKind,
    hp: &HyperParams,
    threshold_for: f64,
    fraction_grid: &[f64],
    seed: u64,
) -> Result<Vec<ProgressivePoint>, ExperimentError> {
    if user_frames.is_empty() {
        return Err(ExperimentError::NoUsers);
    }
    if fraction_grid.is_empty()
        || fraction_grid.windows(2).any(|w| w[1] <= w[0])
        || fraction_grid.iter().any(|f| !(*f > 0.0 && *f < 1.0))
    {
        return Err(ExperimentError::BadGrid);
    }
    let points: Vec<Result<ProgressivePoint, ExperimentError>> = (1..=user_frames.len())
        .into_par_iter()
        .map(|count| {
            let mut pooled = user_frames[0].clone();
            for f in &user_frames[1..count] {
                pooled.append(f)?;
            }
            let holdout = stratified_split(&pooled, 0.75, derive_seed(seed, count as u64))?;
            let test_labels = holdout.test.detection_labels()?;
            let mut found = None;
            for (gi, &fraction) in fraction_grid.iter().enumerate() {
                let sub = stratified_split(
                    &holdout.train,
                    fraction,
                    derive_seed(seed, (count * 1000 + gi) as u64),
                )?;
                let train_labels = sub.train.detection_labels()?;
                let model = detector.fit(
                    &sub.train,
                    &train_labels,
                    hp,
                    derive_seed(seed, (count * 7777 + gi) as u64),
                )?;
                let pred = predict(&model, &holdout.test)?;
                let counts = ConfusionCounts::from_predictions(&test_labels.ids, &pred);
                let rate = for_rate(&counts)?;
                if rate <= threshold_for {
                    found = Some((fraction, rate));
                    break;
                }
            }
            Ok(ProgressivePoint {
                user_count: count,
                min_fraction: found.map(|(f, _)| f),
                achieved_for: found.map(|(_, r)| r),
            })
        })
        .collect();
    points.into_iter().collect()
}

pub fn write_progressive_csv(
    points: &[ProgressivePoint],
    path: &Path,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_count", "min_train_fraction", "achieved_for"])?;
    for p in points {
        w.write_record([
            p.user_count.to_string(),
            p.min_fraction.map_or("unreached".to_string(), |f| f.to_string()),
            p.achieved_for.map_or(String::new(), |r| r.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Class-conditional histogram of one feature with its overlap coefficient
/// (the sum of per-bin minima of the two normalized histograms).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDensity {
    pub feature: String,
    /// `bins + 1` edges, ascending.
    pub edges: Vec<f64>,
    pub benign: Vec<f64>,
    pub malicious: Vec<f64>,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub features: Vec<FeatureDensity>,
    pub skipped: Vec<String>,
}

impl DensityProfile {
    /// Mean overlap coefficient across profiled features.
    pub fn mean_overlap(&self) -> f64 {
        if self.features.is_empty() {
            return 0.0;
        }
        self.features.iter().map(|f| f.overlap).sum::<f64>() / self.features.len() as f64
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

const MIN_BINS: usize = 10;
const MAX_BINS: usize = 512;

/// Freedman–Diaconis bin count (at least [`MIN_BINS`]) on the pooled sample.
fn bin_count(sorted: &[f64]) -> usize {
    let n = sorted.len();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let range = sorted[n - 1] - sorted[0];
    if iqr <= 0.0 || range <= 0.0 {
        return MIN_BINS;
    }
    let width = 2.0 * iqr / (n as f64).cbrt();
    ((range / width).ceil() as usize).clamp(MIN_BINS, MAX_BINS)
}

/// Class-conditional normalized histograms for the named features of a
/// labeled frame. All-null features are skipped with a notice.
pub fn density_profile(
    frame: &FeatureFrame,
    features: &[String],
) -> Result<DensityProfile, ExperimentError> {
    for row in 0..frame.n_rows() {
        if frame.label(row).is_none() {
            return Err(ExperimentError::Unlabeled(row));
        }
    }
    let mut profile = DensityProfile {
        features: Vec::new(),
        skipped: Vec::new(),
    };
    for name in features {
        let col = frame
            .column_index(name)
            .ok_or_else(|| ExperimentError::UnknownFeature(name.clone()))?;
        let mut values = Vec::new();
        let mut flags = Vec::new();
        for row in 0..frame.n_rows() {
            if let Some(v) = frame.get(row, col) {
                values.push(v);
                flags.push(matches!(
                    frame.label(row),
                    Some(RowLabel::Malicious(_))
                ));
            }
        }
        if values.is_empty() {
            profile.skipped.push(name.clone());
            continue;
        }
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let bins = bin_count(&sorted);
        // Degenerate single-value features become one occupied middle bin.
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut benign = vec![0.0; bins];
        let mut malicious = vec![0.0; bins];
        for (v, is_mal) in values.iter().zip(&flags) {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            if *is_mal {
                malicious[b] += 1.0;
            } else {
                benign[b] += 1.0;
            }
        }
        for hist in [&mut benign, &mut malicious] {
            let total: f64 = hist.iter().sum();
            if total > 0.0 {
                for h in hist.iter_mut() {
                    *h /= total;
                }
            }
        }
        let overlap = benign
            .iter()
            .zip(&malicious)
            .map(|(b, m)| b.min(*m))
            .sum();
        profile.features.push(FeatureDensity {
            feature: name.clone(),
            edges,
            benign,
            malicious,
            overlap,
        });
    }
    Ok(profile)
}

/// Plot-ready export: one row per (feature, bin), with the feature's overlap
/// coefficient repeated on each of its rows.
pub fn write_density_csv(profile: &DensityProfile, path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "feature",
        "bin_lo",
        "bin_hi",
        "benign_density",
        "malicious_density",
        "overlap",
    ])?;
    for f in &profile.features {
        for b in 0..f.benign.len() {
            w.write_record([
                f.feature.clone(),
                f.edges[b].to_string(),
                f.edges[b + 1].to_string(),
                f.benign[b].to_string(),
                f.malicious[b].to_string(),
                f.overlap.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of the convergence-curve export.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub feature: String,
    pub metric: f64,
    pub best_so_far: f64,
}

/// Flattens a selection trace into `step,feature,metric` rows plus a
/// monotone best-so-far column (monotone in the metric's orientation).
pub fn convergence_curve(trace: &SelectionTrace) -> Vec<CurvePoint> {
    let mut best: Option<f64> = None;
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| {
            best = Some(match best {
                None => step.metric,
                Some(b) if trace.higher_is_better => b.max(step.metric),
                Some(b) => b.min(step.metric),
            });
            CurvePoint {
                step: i + 1,
                feature: step.feature.clone(),
                metric: step.metric,
                best_so_far: best.unwrap(),
            }
        })
        .collect()
}

pub fn write_convergence_csv(
    trace: &SelectionTrace,
    path: &Path,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "feature", "metric", "best_so_far"])?;
    for p in convergence_curve(trace) {
        w.write_record([
            p.step.to_string(),
            p.feature,
            p.metric.to_string(),
            p.best_so_far.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TheftTarget;
    use crate::telemetry::Timestamp;

    fn labeled_frame(users: usize, benign_per_user: usize, malicious_per_user: usize) -> FeatureFrame {
        let mut f = FeatureFrame::new(vec!["x".into()]).unwrap();
        for u in 0..users {
            for i in 0..benign_per_user + malicious_per_user {
                let label = if i < benign_per_user {
                    RowLabel::Benign
                } else {
                    RowLabel::Malicious(TheftTarget::Gps)
                };
                f.push_row(
                    format!("u{u}"),
                    Timestamp((i * 5000) as i64),
                    Some(label),
                    &[Some(i as f64)],
                )
                .unwrap();
            }
        }
        f
    }

    #[test]
    fn split_shares_match_within_one_row_per_stratum() {
        let frame = labeled_frame(5, 37, 13);
        let split = stratified_split(&frame, 0.75, 1).unwrap();
        assert_eq!(split.train.n_rows() + split.test.n_rows(), frame.n_rows());
        // Check every (user, class) stratum share.
        for u in 0..5 {
            for malicious in [false, true] {
                let count = |f: &FeatureFrame| {
                    (0..f.n_rows())
                        .filter(|&r| {
                            f.user(r) == format!("u{u}")
                                && f.label(r).unwrap().is_malicious() == malicious
                        })
                        .count() as f64
                };
                let train = count(&split.train);
                let total = train + count(&split.test);
                assert!((train - 0.75 * total).abs() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn simple_hundred_row_split_is_75_25() {
        let frame = labeled_frame(1, 100, 0);
        let split = stratified_split(&frame, 0.75, 0).unwrap();
        assert_eq!(split.train.n_rows(), 75);
        assert_eq!(split.test.n_rows(), 25);
    }

    #[test]
    fn degenerate_fraction_is_an_error() {
        let frame = labeled_frame(1, 10, 0);
        assert!(matches!(
            stratified_split(&frame, 0.0, 0),
            Err(ExperimentError::BadFraction(_))
        ));
        assert!(matches!(
            stratified_split(&frame, 1.0, 0),
            Err(ExperimentError::BadFraction(_))
        ));
    }

    #[test]
    fn singleton_strata_go_to_train_and_are_recorded() {
        let frame = labeled_frame(1, 20, 1);
        let split = stratified_split(&frame, 0.75, 3).unwrap();
        assert_eq!(split.singleton_strata.len(), 1);
        let malicious_in_train = split.train.malicious_rows().len();
        assert_eq!(malicious_in_train, 1);
    }

    #[test]
    fn same_seed_same_partition_union_is_identity() {
        let frame = labeled_frame(3, 41, 7);
        let a = stratified_split(&frame, 0.6, 9).unwrap();
        let b = stratified_split(&frame, 0.6, 9).unwrap();
        assert_eq!(a.train_indices, b.train_indices);
        assert_eq!(a.test_indices, b.test_indices);
        let mut all: Vec<usize> = a
            .train_indices
            .iter()
            .chain(&a.test_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..frame.n_rows()).collect::<Vec<_>>());
        let c = stratified_split(&frame, 0.6, 10).unwrap();
        assert_ne!(a.train_indices, c.train_indices);
    }

    #[test]
    fn identical_class_distributions_overlap_near_one() {
        use rand::Rng;
        let mut rng = rng_for(4, 0);
        let mut f = FeatureFrame::new(vec!["x".into()]).unwrap();
        for i in 0..4000 {
            let label = if i % 2 == 0 {
                RowLabel::Benign
            } else {
                RowLabel::Malicious(TheftTarget::Url)
            };
            f.push_row(
                "u0".into(),
                Timestamp(i),
                Some(label),
                &[Some(rng.gen::<f64>())],
            )
            .unwrap();
        }
        let profile = density_profile(&f, &["x".to_string()]).unwrap();
        assert!(profile.features[0].overlap > 0.9);
    }

    #[test]
    fn disjoint_supports_overlap_zero() {
        let mut f = FeatureFrame::new(vec!["x".into()]).unwrap();
        for i in 0..200 {
            let (label, v) = if i % 2 == 0 {
                (RowLabel::Benign, i as f64)
            } else {
                (RowLabel::Malicious(TheftTarget::Url), 10_000.0 + i as f64)
            };
            f.push_row("u0".into(), Timestamp(i), Some(label), &[Some(v)])
                .unwrap();
        }
        let profile = density_profile(&f, &["x".to_string()]).unwrap();
        assert_eq!(profile.features[0].overlap, 0.0);
    }

    #[test]
    fn all_null_features_are_skipped_with_notice() {
        let mut f = FeatureFrame::new(vec!["x".into(), "dead".into()]).unwrap();
        for i in 0..20 {
            f.push_row(
                "u0".into(),
                Timestamp(i),
                Some(RowLabel::Benign),
                &[Some(i as f64), None],
            )
            .unwrap();
        }
        let profile =
            density_profile(&f, &["x".to_string(), "dead".to_string()]).unwrap();
        assert_eq!(profile.features.len(), 1);
        assert_eq!(profile.skipped, vec!["dead".to_string()]);
    }
}
