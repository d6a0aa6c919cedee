//! Two-phase feature selection: boosted-ensemble gain ranking truncated to a
//! fixed k, then stepwise forward selection down to a minimal subset.
//!
//! Forward selection is a greedy wrapper: at each step every remaining
//! candidate is scored by training the factory model on the chosen set plus
//! that candidate and evaluating a metric on an internal stratified 75/25
//! validation split (fixed seed). The best candidate is added permanently.
//! The loop stops after `patience` consecutive additions that each improved
//! the best-so-far metric by less than `tolerance`, or at `max_features`;
//! the chosen subset is the prefix that achieved the best metric ever seen.
//! Selection only ever sees the frame it is handed — callers pass training
//! data, keeping the held-out test split out of the wrapper loop.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::experiments::{labels_for, stratified_split, ExperimentError};
use crate::ingest::{FeatureFrame, FrameError, Labels};
use crate::learners::{
    fit_boosted, importance, predict, HyperParams, LearnError, LearnerKind,
};
use crate::metrics::{f1_report, for_rate, ConfusionCounts, MultiClassConfusion};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("k must be in 1..={max}, got {k}")]
    BadK { k: usize, max: usize },
    #[error("no candidate features given")]
    EmptyCandidates,
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("every candidate failed to train")]
    NoUsableCandidate,
    #[error("learn: {0}")]
    Learn(#[from] LearnError),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("split: {0}")]
    Split(#[from] Box<ExperimentError>),
}

impl From<ExperimentError> for SelectError {
    fn from(e: ExperimentError) -> Self {
        SelectError::Split(Box::new(e))
    }
}

/// Fits a boosted ensemble on all columns and returns the top-k feature
/// names by accumulated split gain (ties broken by name).
pub fn rank_and_truncate(
    frame: &FeatureFrame,
    labels: &Labels,
    k: usize,
    hp: &HyperParams,
    seed: u64,
) -> Result<Vec<String>, SelectError> {
    if k == 0 || k > frame.n_cols() {
        return Err(SelectError::BadK {
            k,
            max: frame.n_cols(),
        });
    }
    let model = fit_boosted(frame, labels, hp, seed)?;
    Ok(importance(&model)
        .into_iter()
        .take(k)
        .map(|(name, _)| name)
        .collect())
}

/// Validation metric for the wrapper loop, with its orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MetricKind {
    /// Detector miss rate; lower is better. Undefined scores as worst (1.0).
    ForRate,
    /// Macro-averaged F1; higher is better.
    MacroF1,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::MacroF1)
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::ForRate => "for_rate",
            MetricKind::MacroF1 => "macro_f1",
        }
    }

    pub fn evaluate(self, truth: &[usize], predicted: &[usize], classes: &[String]) -> f64 {
        match self {
            MetricKind::ForRate => {
                let counts = ConfusionCounts::from_predictions(truth, predicted);
                for_rate(&counts).unwrap_or(1.0)
            }
            MetricKind::MacroF1 => {
                let m = MultiClassConfusion::from_predictions(classes.to_vec(), truth, predicted);
                f1_report(&m).map(|r| r.macro_f1).unwrap_or(0.0)
            }
        }
    }
}

/// Trains one configured learner per candidate evaluation.
#[derive(Debug, Clone)]
pub struct ModelFactory {
    pub learner: LearnerKind,
    pub hp: HyperParams,
}

impl ModelFactory {
    pub fn new(learner: LearnerKind, hp: HyperParams) -> ModelFactory {
        ModelFactory { learner, hp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// `patience` consecutive additions each improved by less than the
    /// tolerance.
    Converged,
    /// Every candidate was added (or failed).
    Exhausted,
    /// The feature budget was reached.
    MaxReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStep {
    pub feature: String,
    /// Validation metric after this feature was added.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionTrace {
    /// Every accepted addition, in order.
    pub steps: Vec<SelectionStep>,
    /// The prefix of additions that achieved the best metric.
    pub chosen: Vec<String>,
    pub stop: StopReason,
    pub higher_is_better: bool,
    /// Candidates dropped because the factory failed on them.
    pub skipped: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
pub fn forward_select(
    frame: &FeatureFrame,
    labels: &Labels,
    candidates: &[String],
    factory: &ModelFactory,
    metric: MetricKind,
    tolerance: f64,
    patience: usize,
    max_features: usize,
    seed: u64,
) -> Result<SelectionTrace, SelectError> {
    if candidates.is_empty() {
        return Err(SelectError::EmptyCandidates);
    }
    for c in candidates {
        if frame.column_index(c).is_none() {
            return Err(SelectError::Frame(FrameError::UnknownColumn(c.clone())));
        }
    }
    if max_features == 0 {
        return Err(SelectError::BadParameter("max_features must be positive".into()));
    }
    if patience == 0 {
        return Err(SelectError::BadParameter("patience must be positive".into()));
    }
    if tolerance < 0.0 {
        return Err(SelectError::BadParameter("tolerance must be non-negative".into()));
    }
    let split = stratified_split(frame, 0.75, derive_seed(seed, 0xFEA7))?;
    let train_labels = labels_for(labels, &split.train_indices);
    let val_labels = labels_for(labels, &split.test_indices);
    let sign = if metric.higher_is_better() { 1.0 } else { -1.0 };

    let mut remaining: Vec<String> = candidates.to_vec();
    let mut chosen: Vec<String> = Vec::new();
    let mut steps: Vec<SelectionStep> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    let mut best_metric: Option<f64> = None;
    let mut best_len = 0usize;
    let mut low_streak = 0usize;
    let mut stop = StopReason::Exhausted;

    while !remaining.is_empty() {
        if chosen.len() >= max_features {
            stop = StopReason::MaxReached;
            break;
        }
        let step_idx = steps.len() as u64;
        let scores: Vec<Result<f64, String>> = remaining
            .par_iter()
            .enumerate()
            .map(|(i, candidate)| {
                let mut columns = chosen.clone();
                columns.push(candidate.clone());
                let train = split.train.select_columns(&columns).map_err(|e| e.to_string())?;
                let val = split.test.select_columns(&columns).map_err(|e| e.to_string())?;
                let model = factory
                    .learner
                    .fit(
                        &train,
                        &train_labels,
                        &factory.hp,
                        derive_seed(seed, step_idx * 4096 + i as u64),
                    )
                    .map_err(|e| e.to_string())?;
                let pred = predict(&model, &val).map_err(|e| e.to_string())?;
                Ok(metric.evaluate(&val_labels.ids, &pred, &val_labels.classes))
            })
            .collect();
        let mut best_candidate: Option<(usize, f64)> = None;
        let mut failed: Vec<usize> = Vec::new();
        for (i, score) in scores.iter().enumerate() {
            match score {
                Ok(m) => {
                    let better = match best_candidate {
                        None => true,
                        Some((_, b)) => m * sign > b * sign,
                    };
                    if better {
                        best_candidate = Some((i, *m));
                    }
                }
                Err(_) => failed.push(i),
            }
        }
        // Drop failing candidates permanently, keeping indices valid.
        for &i in failed.iter().rev() {
            skipped.push(remaining.remove(i));
        }
        let Some((best_i, best_m)) = best_candidate else {
            if chosen.is_empty() && remaining.is_empty() {
                return Err(SelectError::NoUsableCandidate);
            }
            continue;
        };
        let feature = remaining.remove(adjust_index(best_i, &failed));
        chosen.push(feature.clone());
        steps.push(SelectionStep {
            feature,
            metric: best_m,
        });
        let improvement = match best_metric {
            None => f64::INFINITY,
            Some(b) => (best_m - b) * sign,
        };
        if improvement > 0.0 {
            best_metric = Some(best_m);
            best_len = chosen.len();
        }
        if improvement < tolerance {
            low_streak += 1;
            if low_streak >= patience {
                stop = StopReason::Converged;
                break;
            }
        } else {
            low_streak = 0;
        }
    }
    Ok(SelectionTrace {
        chosen: chosen[..best_len].to_vec(),
        steps,
        stop,
        higher_is_better: metric.higher_is_better(),
        skipped,
    })
}

/// Index of the winning candidate after the failed indices (ascending) were
/// removed from the vector it was found in.
fn adjust_index(winner: usize, removed_ascending: &[usize]) -> usize {
    let shift = removed_ascending.iter().filter(|&&i| i < winner).count();
    winner - shift
}
