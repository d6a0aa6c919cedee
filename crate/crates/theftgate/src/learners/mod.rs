//! From-scratch tree-ensemble and neighbour learners.
//!
//! All learners share one model container, [`TreeEnsemble`], and the same
//! null-handling convention: missing values are routed per split along a
//! learned direction (the direction that scored the higher gain when the
//! split was made), never imputed. Training is deterministic for a fixed
//! seed regardless of thread count — parallel work is seeded per item and
//! reduced in a fixed order.

mod boost;
mod forest;
mod isolation;
mod knn;
mod serial;
mod split;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FeatureFrame, FrameError, Labels};

pub use boost::{boosted_round_logloss, fit_boosted, logistic_gradients};
pub use forest::{fit_extra_trees, fit_random_forest};
pub use isolation::{anomaly_score, anomaly_scores, fit_isolation_forest};
pub use knn::{fit_knn, predict_knn, KnnModel};
pub use tree::fit_tree;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("cannot train on an empty frame")]
    EmptyFrame,
    #[error("isolation forest needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("bad hyperparameter: {0}")]
    BadHyperParams(String),
    #[error("label id {id} out of range for {classes} classes")]
    LabelOutOfRange { id: usize, classes: usize },
    #[error("labels cover {got} rows, frame has {want}")]
    LabelCountMismatch { got: usize, want: usize },
    #[error(
        "frame columns do not match training schema: missing {missing:?}, unexpected {unexpected:?}{}",
        if *order_only { " (same names, different order)" } else { "" }
    )]
    SchemaMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
        order_only: bool,
    },
    #[error("k = {k} exceeds training rows = {rows}")]
    KTooLarge { k: usize, rows: usize },
    #[error("model schema hash mismatch: stored {stored:#018x}, expected {expected:#018x}")]
    SchemaHash { stored: u64, expected: u64 },
    #[error("feature importance is unsupported for k-nearest-neighbour models")]
    ImportanceUnsupported,
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Shared hyperparameter bag. Each fit reads the fields relevant to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Per-split feature subsample fraction in (0, 1]. `None` means the
    /// √p rule for forests and all features elsewhere.
    pub feature_subsample: Option<f64>,
    pub learning_rate: f64,
    pub boosting_rounds: usize,
    pub l2_leaf: f64,
    pub knn_k: usize,
    pub iso_subsample: usize,
    /// Expected anomaly fraction; sets the isolation-forest score threshold
    /// at the matching training-score quantile.
    pub iso_contamination: f64,
    /// When set, split search considers roughly this many candidate
    /// thresholds per feature instead of every midpoint. Exact search is the
    /// default and is what the split oracle checks.
    pub histogram_bins: Option<usize>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            tree_count: 100,
            max_depth: 12,
            min_leaf: 5,
            feature_subsample: None,
            learning_rate: 0.1,
            boosting_rounds: 200,
            l2_leaf: 1.0,
            knn_k: 5,
            iso_subsample: 256,
            iso_contamination: 0.05,
            histogram_bins: None,
        }
    }
}

impl HyperParams {
    pub(crate) fn validate(&self) -> Result<(), LearnError> {
        let bad = |msg: &str| Err(LearnError::BadHyperParams(msg.to_string()));
        if self.tree_count == 0 {
            return bad("tree_count must be positive");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be positive");
        }
        if let Some(f) = self.feature_subsample {
            if !(f > 0.0 && f <= 1.0) {
                return bad("feature_subsample must be in (0, 1]");
            }
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.l2_leaf < 0.0 {
            return bad("l2_leaf must be non-negative");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be positive");
        }
        if self.iso_subsample < 2 {
            return bad("iso_subsample must be at least 2");
        }
        if !(self.iso_contamination > 0.0 && self.iso_contamination < 1.0) {
            return bad("iso_contamination must be in (0, 1)");
        }
        Ok(())
    }

    /// Features to consider per split for a frame of width `p`.
    pub(crate) fn features_per_split(&self, p: usize, default_all: bool) -> usize {
        match self.feature_subsample {
            Some(f) => ((f * p as f64).ceil() as usize).clamp(1, p),
            None if default_all => p,
            None => ((p as f64).sqrt().round() as usize).clamp(1, p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleKind {
    SingleTree,
    ExtraTrees,
    RandomForest,
    GradientBoosted,
    IsolationForest,
}

/// The supervised learners selectable by name (CLI flags, factories).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerKind {
    DecisionTree,
    ExtraTrees,
    RandomForest,
    GradientBoosted,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::DecisionTree => "decision-tree",
            LearnerKind::ExtraTrees => "extra-trees",
            LearnerKind::RandomForest => "random-forest",
            LearnerKind::GradientBoosted => "boosted",
        }
    }

    pub fn parse(s: &str) -> Option<LearnerKind> {
        match s {
            "decision-tree" | "tree" => Some(LearnerKind::DecisionTree),
            "extra-trees" => Some(LearnerKind::ExtraTrees),
            "random-forest" => Some(LearnerKind::RandomForest),
            "boosted" | "gradient-boosted" => Some(LearnerKind::GradientBoosted),
            _ => None,
        }
    }

    pub fn fit(
        self,
        frame: &FeatureFrame,
        labels: &Labels,
        hp: &HyperParams,
        seed: u64,
    ) -> Result<TreeEnsemble, LearnError> {
        match self {
            LearnerKind::DecisionTree => fit_tree(frame, labels, hp, seed),
            LearnerKind::ExtraTrees => fit_extra_trees(frame, labels, hp, seed),
            LearnerKind::RandomForest => fit_random_forest(frame, labels, hp, seed),
            LearnerKind::GradientBoosted => fit_boosted(frame, labels, hp, seed),
        }
    }
}

impl EnsembleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::SingleTree => "decision-tree",
            EnsembleKind::ExtraTrees => "extra-trees",
            EnsembleKind::RandomForest => "random-forest",
            EnsembleKind::GradientBoosted => "gradient-boosted",
            EnsembleKind::IsolationForest => "isolation-forest",
        }
    }
}

/// One node of a trained tree. Trees live in an arena (`Vec<Node>`) with the
/// root at index 0.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        missing_left: bool,
        /// Realized split gain (count-weighted impurity decrease for
        /// classifiers, second-order gain for boosting).
        gain: f64,
        left: usize,
        right: usize,
    },
    /// Classifier leaf: class distribution (sums to 1).
    LeafDist(Vec<f64>),
    /// Boosting leaf: additive raw-score contribution (learning rate already
    /// applied).
    LeafValue(f64),
    /// Isolation leaf: count of training rows that ended here.
    LeafSize(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Walks to the leaf for a row, following learned missing directions.
    pub fn descend<F: Fn(usize) -> Option<f64>>(&self, value_at: F) -> &Node {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match value_at(*feature) {
                        Some(v) => v <= *threshold,
                        None => *missing_left,
                    };
                    idx = if go_left { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    /// Leaf depth (edge count) plus the leaf's training size, for isolation
    /// path lengths.
    pub(crate) fn iso_path<F: Fn(usize) -> Option<f64>>(&self, value_at: F) -> (usize, usize) {
        let mut idx = 0;
        let mut depth = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match value_at(*feature) {
                        Some(v) => v <= *threshold,
                        None => *missing_left,
                    };
                    idx = if go_left { *left } else { *right };
                    depth += 1;
                }
                Node::LeafSize(size) => return (depth, *size),
                _ => unreachable!("isolation trees only hold size leaves"),
            }
        }
    }
}

/// A trained model: trees, the schema it was fit on, per-feature accumulated
/// split gain, and everything needed to reproduce the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub kind: EnsembleKind,
    pub feature_names: Vec<String>,
    pub classes: Vec<String>,
    pub(crate) trees: Vec<Tree>,
    pub(crate) feature_gain: Vec<f64>,
    /// Boosting prior (raw scores before any trees): one entry for binary
    /// models, one per class otherwise. Empty for non-boosted kinds.
    pub(crate) base_score: Vec<f64>,
    /// Isolation normalization constant c(ψ); 0 for other kinds.
    pub(crate) iso_norm: f64,
    /// Isolation decision threshold from the contamination quantile.
    pub(crate) iso_threshold: f64,
    pub hp: HyperParams,
    pub seed: u64,
}

impl TreeEnsemble {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn feature_gain(&self) -> &[f64] {
        &self.feature_gain
    }

    pub fn base_score(&self) -> &[f64] {
        &self.base_score
    }

    pub fn iso_threshold(&self) -> f64 {
        self.iso_threshold
    }

    /// Checks that a frame's columns match the training schema, names and
    /// order both.
    pub fn check_schema(&self, frame: &FeatureFrame) -> Result<(), LearnError> {
        if frame.columns() == &self.feature_names[..] {
            return Ok(());
        }
        let missing: Vec<String> = self
            .feature_names
            .iter()
            .filter(|f| frame.column_index(f).is_none())
            .cloned()
            .collect();
        let unexpected: Vec<String> = frame
            .columns()
            .iter()
            .filter(|c| !self.feature_names.contains(c))
            .cloned()
            .collect();
        let order_only = missing.is_empty() && unexpected.is_empty();
        Err(LearnError::SchemaMismatch {
            missing,
            unexpected,
            order_only,
        })
    }
}

/// Class predictions for every row of `frame`. Deterministic; ties at equal
/// votes or probabilities resolve to the lowest class index.
pub fn predict(model: &TreeEnsemble, frame: &FeatureFrame) -> Result<Vec<usize>, LearnError> {
    model.check_schema(frame)?;
    match model.kind {
        EnsembleKind::GradientBoosted => Ok(boost::predict_rows(model, frame)),
        EnsembleKind::IsolationForest => Ok(isolation::predict_rows(model, frame)),
        _ => Ok(forest::predict_rows(model, frame)),
    }
}

/// Per-class probabilities for every row; each row sums to 1 (within float
/// error). For isolation forests this is `[1 - score, score]`.
pub fn predict_proba(
    model: &TreeEnsemble,
    frame: &FeatureFrame,
) -> Result<Vec<Vec<f64>>, LearnError> {
    model.check_schema(frame)?;
    match model.kind {
        EnsembleKind::GradientBoosted => Ok(boost::proba_rows(model, frame)),
        EnsembleKind::IsolationForest => Ok(isolation::proba_rows(model, frame)),
        _ => Ok(forest::proba_rows(model, frame)),
    }
}

/// Features ranked by accumulated split gain, descending; ties break by
/// feature name. Features never split have gain exactly 0.
pub fn importance(model: &TreeEnsemble) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = model
        .feature_names
        .iter()
        .cloned()
        .zip(model.feature_gain.iter().copied())
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked
}

/// Either model family behind one prediction surface, for experiment code
/// that compares tree ensembles against k-nearest neighbours.
pub enum AnyModel {
    Trees(TreeEnsemble),
    Knn(KnnModel),
}

impl AnyModel {
    pub fn predict(&self, frame: &FeatureFrame) -> Result<Vec<usize>, LearnError> {
        match self {
            AnyModel::Trees(m) => predict(m, frame),
            AnyModel::Knn(m) => predict_knn(m, frame),
        }
    }

    pub fn importance(&self) -> Result<Vec<(String, f64)>, LearnError> {
        match self {
            AnyModel::Trees(m) => Ok(importance(m)),
            AnyModel::Knn(_) => Err(LearnError::ImportanceUnsupported),
        }
    }

    pub fn classes(&self) -> &[String] {
        match self {
            AnyModel::Trees(m) => &m.classes,
            AnyModel::Knn(m) => &m.classes,
        }
    }
}

/// Column-major training view of a frame: values plus presence flags.
pub(crate) struct DataView {
    pub cols: Vec<Column>,
    pub n_rows: usize,
}

pub(crate) struct Column {
    pub values: Vec<f64>,
    pub present: Vec<bool>,
}

impl DataView {
    pub fn from_frame(frame: &FeatureFrame) -> DataView {
        let n_rows = frame.n_rows();
        let cols = (0..frame.n_cols())
            .map(|c| {
                let mut values = Vec::with_capacity(n_rows);
                let mut present = Vec::with_capacity(n_rows);
                for r in 0..n_rows {
                    match frame.get(r, c) {
                        Some(v) => {
                            values.push(v);
                            present.push(true);
                        }
                        None => {
                            values.push(0.0);
                            present.push(false);
                        }
                    }
                }
                Column { values, present }
            })
            .collect();
        DataView { cols, n_rows }
    }
}

pub(crate) fn check_labels(frame: &FeatureFrame, labels: &Labels) -> Result<(), LearnError> {
    if frame.n_rows() == 0 {
        return Err(LearnError::EmptyFrame);
    }
    if labels.ids.len() != frame.n_rows() {
        return Err(LearnError::LabelCountMismatch {
            got: labels.ids.len(),
            want: frame.n_rows(),
        });
    }
    for &id in &labels.ids {
        if id >= labels.n_classes() {
            return Err(LearnError::LabelOutOfRange {
                id,
                classes: labels.n_classes(),
            });
        }
    }
    Ok(())
}

/// Deterministic argmax with lowest-index tie-break.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
