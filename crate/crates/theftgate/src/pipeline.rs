//! The two-stage cascade: a binary malware detector gates a six-class
//! data-theft target classifier.
//!
//! Stage 2 trains on ground-truth-malicious rows (not stage-1 positives), so
//! classifier quality is not coupled to detector errors; at inference, only
//! rows the detector flags malicious ever reach the target classifier,
//! which an invocation counter makes observable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::binio;
use crate::ingest::{FeatureFrame, FrameError, RowLabel, TheftTarget};
use crate::learners::{
    predict, predict_proba, HyperParams, LearnError, LearnerKind, TreeEnsemble,
};
use crate::metrics::{
    f1_report, DetectionReport, ConfusionCounts, EvaluationReport, MetricError,
    MultiClassConfusion, ReportMeta,
};
use crate::seed::derive_seed;

const PIPELINE_MAGIC: &[u8; 4] = b"TGP1";
const PIPELINE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame has no malicious rows; the target classifier is untrainable")]
    NoMaliciousRows,
    #[error("row {0} is unlabeled")]
    Unlabeled(usize),
    #[error("learn: {0}")]
    Learn(#[from] LearnError),
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Trained cascade. The two feature lists may differ and usually do.
#[derive(Debug)]
pub struct TwoStageModel {
    pub detector: TreeEnsemble,
    pub target_classifier: TreeEnsemble,
    pub detector_features: Vec<String>,
    pub target_features: Vec<String>,
    stage2_calls: AtomicU64,
}

impl PartialEq for TwoStageModel {
    fn eq(&self, other: &Self) -> bool {
        self.detector == other.detector
            && self.target_classifier == other.target_classifier
            && self.detector_features == other.detector_features
            && self.target_features == other.target_features
    }
}

/// Outcome for one row: benign, or malicious with the classified target.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Benign,
    Malicious {
        target: TheftTarget,
        /// Detector probability for the malicious class.
        stage1_score: f64,
        /// Target-classifier distribution over the six classes.
        stage2_probabilities: Vec<f64>,
    },
}

impl Verdict {
    pub fn is_malicious(&self) -> bool {
        matches!(self, Verdict::Malicious { .. })
    }

    pub fn target(&self) -> Option<TheftTarget> {
        match self {
            Verdict::Benign => None,
            Verdict::Malicious { target, .. } => Some(*target),
        }
    }
}

/// Trains the cascade: the detector on every row over `detector_features`,
/// the target classifier on ground-truth-malicious rows over
/// `target_features`. Target classes with zero training rows are reported
/// as warnings — they can never be predicted.
#[allow(clippy::too_many_arguments)]
pub fn train_two_stage(
    frame: &FeatureFrame,
    detector_features: &[String],
    target_features: &[String],
    detector_kind: LearnerKind,
    classifier_kind: LearnerKind,
    hp: &HyperParams,
    seed: u64,
) -> Result<(TwoStageModel, Vec<String>), PipelineError> {
    let detection_labels = frame.detection_labels()?;
    let malicious_rows = frame.malicious_rows();
    if malicious_rows.is_empty() {
        return Err(PipelineError::NoMaliciousRows);
    }
    let detector_frame = frame.select_columns(detector_features)?;
    let detector = detector_kind.fit(
        &detector_frame,
        &detection_labels,
        hp,
        derive_seed(seed, 1),
    )?;
    let target_frame = frame.take_rows(&malicious_rows);
    let target_labels = target_frame.target_labels()?;
    let target_frame = target_frame.select_columns(target_features)?;
    let mut warnings = Vec::new();
    let mut support = vec![0usize; TheftTarget::ALL.len()];
    for &id in &target_labels.ids {
        support[id] += 1;
    }
    for (i, &count) in support.iter().enumerate() {
        if count == 0 {
            warnings.push(format!(
                "target class {} has zero training rows and can never be predicted",
                TheftTarget::ALL[i]
            ));
        }
    }
    let target_classifier = classifier_kind.fit(
        &target_frame,
        &target_labels,
        hp,
        derive_seed(seed, 2),
    )?;
    Ok((
        TwoStageModel {
            detector,
            target_classifier,
            detector_features: detector_features.to_vec(),
            target_features: target_features.to_vec(),
            stage2_calls: AtomicU64::new(0),
        },
        warnings,
    ))
}

impl TwoStageModel {
    /// Rows the target classifier has been invoked on since construction or
    /// load (the gating observable).
    pub fn stage2_invocations(&self) -> u64 {
        self.stage2_calls.load(Ordering::Relaxed)
    }
}

/// Classifies every row of a frame. Stage 2 runs only on rows the detector
/// flags malicious; the model's invocation counter advances by exactly that
/// many rows.
pub fn classify_frame(
    model: &TwoStageModel,
    frame: &FeatureFrame,
) -> Result<Vec<Verdict>, PipelineError> {
    let detector_view = frame.select_columns(&model.detector_features)?;
    let stage1_pred = predict(&model.detector, &detector_view)?;
    let stage1_proba = predict_proba(&model.detector, &detector_view)?;
    let flagged: Vec<usize> = (0..frame.n_rows())
        .filter(|&r| stage1_pred[r] == 1)
        .collect();
    let mut verdicts = vec![Verdict::Benign; frame.n_rows()];
    if !flagged.is_empty() {
        let target_view = frame
            .take_rows(&flagged)
            .select_columns(&model.target_features)?;
        let stage2_pred = predict(&model.target_classifier, &target_view)?;
        let stage2_proba = predict_proba(&model.target_classifier, &target_view)?;
        model
            .stage2_calls
            .fetch_add(flagged.len() as u64, Ordering::Relaxed);
        for (i, &row) in flagged.iter().enumerate() {
            let target = TheftTarget::from_index(stage2_pred[i])
                .expect("target classifier predicts exactly the six classes");
            verdicts[row] = Verdict::Malicious {
                target,
                stage1_score: stage1_proba[row][1],
                stage2_probabilities: stage2_proba[i].clone(),
            };
        }
    }
    Ok(verdicts)
}

/// Single-row convenience wrapper around [`classify_frame`].
pub fn classify(
    model: &TwoStageModel,
    frame: &FeatureFrame,
    row: usize,
) -> Result<Verdict, PipelineError> {
    let one = frame.take_rows(&[row]);
    Ok(classify_frame(model, &one)?.remove(0))
}

/// The three evaluation views of one test pass.
pub struct TwoStageEvaluation {
    pub report: EvaluationReport,
    pub verdicts: Vec<Verdict>,
}

/// Evaluates the cascade on a labeled test frame.
///
/// - stage 1: detection rates over all rows;
/// - stage 2 (gated): F1 over rows that are detector-flagged *and* truly
///   malicious — the rows whose target labels exist downstream of the gate;
/// - end to end: F1 over all ground-truth-malicious rows, with detector
///   misses charged against recall via a zero-support "Benign" bucket.
pub fn evaluate_two_stage(
    model: &TwoStageModel,
    test: &FeatureFrame,
) -> Result<TwoStageEvaluation, PipelineError> {
    let truth = test.detection_labels()?;
    let verdicts = classify_frame(model, test)?;
    let predicted: Vec<usize> = verdicts.iter().map(|v| v.is_malicious() as usize).collect();
    let stage1 = DetectionReport::from_counts(ConfusionCounts::from_predictions(
        &truth.ids, &predicted,
    ))?;

    let target_classes: Vec<String> = TheftTarget::ALL
        .iter()
        .map(|t| t.as_str().to_string())
        .collect();
    let mut gated = MultiClassConfusion::new(target_classes.clone());
    let mut end_classes = target_classes;
    end_classes.push("Benign".to_string());
    let missed = end_classes.len() - 1;
    let mut end_to_end = MultiClassConfusion::new(end_classes);
    for row in 0..test.n_rows() {
        let Some(RowLabel::Malicious(true_target)) = test.label(row) else {
            continue;
        };
        match verdicts[row].target() {
            Some(predicted_target) => {
                gated.record(true_target.index(), predicted_target.index());
                end_to_end.record(true_target.index(), predicted_target.index());
            }
            None => end_to_end.record(true_target.index(), missed),
        }
    }
    let stage2_gated = (gated.total() > 0).then(|| f1_report(&gated)).transpose()?;
    let end_report = (end_to_end.total() > 0)
        .then(|| f1_report(&end_to_end))
        .transpose()?;
    let report = EvaluationReport {
        stage1,
        stage2_gated,
        end_to_end: end_report,
        meta: ReportMeta {
            seed: model.detector.seed,
            detector: Some(model.detector.kind.as_str().to_string()),
            classifier: Some(model.target_classifier.kind.as_str().to_string()),
            detector_features: model.detector_features.clone(),
            target_features: model.target_features.clone(),
            hyperparams: serde_json::to_value(&model.detector.hp).ok(),
            ..ReportMeta::default()
        },
    };
    Ok(TwoStageEvaluation { report, verdicts })
}

impl TwoStageModel {
    /// `pipeline.bin`: both serialized models back to back under one header.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(PIPELINE_MAGIC)?;
        binio::write_u32(&mut w, PIPELINE_VERSION)?;
        self.detector.save_to(&mut w)?;
        self.target_classifier.save_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TwoStageModel, PipelineError> {
        let mut r = BufReader::new(File::open(path)?);
        binio::expect_magic(&mut r, PIPELINE_MAGIC, "pipeline")?;
        let version = binio::read_u32(&mut r)?;
        if version != PIPELINE_VERSION {
            return Err(
                binio::invalid(&format!("unsupported pipeline version {version}")).into(),
            );
        }
        let detector = TreeEnsemble::load_from(&mut r)?;
        let target_classifier = TreeEnsemble::load_from(&mut r)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(binio::invalid("trailing bytes after pipeline models").into());
        }
        Ok(TwoStageModel {
            detector_features: detector.feature_names.clone(),
            target_features: target_classifier.feature_names.clone(),
            detector,
            target_classifier,
            stage2_calls: AtomicU64::new(0),
        })
    }
}

/// Verdict export: `user,t_ms,verdict,target,score`.
pub fn write_verdicts_csv(
    frame: &FeatureFrame,
    verdicts: &[Verdict],
    path: &Path,
) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user", "t_ms", "verdict", "target", "score"])?;
    for (row, verdict) in verdicts.iter().enumerate() {
        let (kind, target, score) = match verdict {
            Verdict::Benign => ("benign", String::new(), String::new()),
            Verdict::Malicious {
                target,
                stage1_score,
                ..
            } => ("malicious", target.as_str().to_string(), stage1_score.to_string()),
        };
        w.write_record([
            frame.user(row),
            &frame.timestamp(row).millis().to_string(),
            kind,
            &target,
            &score,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a verdict CSV as (user, t_ms, is_malicious, target) rows.
pub fn read_verdicts_csv(
    path: &Path,
) -> Result<Vec<(String, i64, bool, Option<TheftTarget>)>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let user = record[0].to_string();
        let t = record[1].parse::<i64>().map_err(|_| {
            PipelineError::Io(std::io::Error::other("bad t_ms in verdict csv"))
        })?;
        let malicious = &record[2] == "malicious";
        let target = TheftTarget::parse(&record[3]);
        out.push((user, t, malicious, target));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_frame, SynthConfig};

    fn quick_hp() -> HyperParams {
        HyperParams {
            tree_count: 30,
            max_depth: 8,
            min_leaf: 2,
            boosting_rounds: 25,
            learning_rate: 0.3,
            ..HyperParams::default()
        }
    }

    fn synth_frame() -> FeatureFrame {
        let config = SynthConfig {
            users: 2,
            rows_per_user: 2500,
            overlap: 0.1,
            seed: 11,
            ..SynthConfig::default()
        };
        generate_frame(&config).unwrap().0
    }

    #[test]
    fn training_counts_and_gating() {
        let frame = synth_frame();
        let features = frame.columns().to_vec();
        let (model, warnings) = train_two_stage(
            &frame,
            &features,
            &features,
            LearnerKind::ExtraTrees,
            LearnerKind::GradientBoosted,
            &quick_hp(),
            5,
        )
        .unwrap();
        assert!(warnings.is_empty(), "unexpected warnings: {warnings:?}");
        let verdicts = classify_frame(&model, &frame).unwrap();
        let flagged = verdicts.iter().filter(|v| v.is_malicious()).count() as u64;
        assert_eq!(model.stage2_invocations(), flagged);
        for v in &verdicts {
            if let Verdict::Malicious {
                stage2_probabilities,
                ..
            } = v
            {
                let total: f64 = stage2_probabilities.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_malicious_rows_is_an_error() {
        let frame = synth_frame();
        let benign_rows: Vec<usize> = (0..frame.n_rows())
            .filter(|&r| !frame.label(r).unwrap().is_malicious())
            .collect();
        let benign_only = frame.take_rows(&benign_rows);
        let features = frame.columns().to_vec();
        assert!(matches!(
            train_two_stage(
                &benign_only,
                &features,
                &features,
                LearnerKind::ExtraTrees,
                LearnerKind::GradientBoosted,
                &quick_hp(),
                5,
            ),
            Err(PipelineError::NoMaliciousRows)
        ));
    }
}
