//! Isolation forest: anomaly scoring by isolation depth under random
//! axis-aligned cuts.
//!
//! Score of a row is `2^(-E[h] / c(ψ))` where `E[h]` is the mean path length
//! over trees (leaf depth plus the average-path correction `c` of the leaf's
//! training size) and `c(ψ)` normalizes by the subsample size. Scores near 1
//! are anomalous. Binary predictions threshold the score at the model's
//! contamination quantile measured on the training frame.

use rand::Rng;
use rayon::prelude::*;

use super::{DataView, EnsembleKind, HyperParams, LearnError, Node, Tree, TreeEnsemble};
use crate::ingest::FeatureFrame;
use crate::seed::rng_for;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average unsuccessful-search path length of a binary search tree over `n`
/// points: `2H(n-1) - 2(n-1)/n`, with `H(i) ≈ ln(i) + γ`.
fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let nf = n as f64;
            2.0 * ((nf - 1.0).ln() + EULER_GAMMA) - 2.0 * (nf - 1.0) / nf
        }
    }
}

fn grow_iso(
    nodes: &mut Vec<Node>,
    data: &DataView,
    rows: Vec<usize>,
    depth: usize,
    limit: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> usize {
    if depth >= limit || rows.len() <= 1 {
        let idx = nodes.len();
        nodes.push(Node::LeafSize(rows.len()));
        return idx;
    }
    // Features that can actually be cut: at least two distinct present values.
    let mut candidates = Vec::new();
    for (f, col) in data.cols.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &r in &rows {
            if col.present[r] {
                lo = lo.min(col.values[r]);
                hi = hi.max(col.values[r]);
            }
        }
        if hi > lo {
            candidates.push((f, lo, hi));
        }
    }
    if candidates.is_empty() {
        let idx = nodes.len();
        nodes.push(Node::LeafSize(rows.len()));
        return idx;
    }
    let (feature, lo, hi) = candidates[rng.gen_range(0..candidates.len())];
    let threshold = lo + rng.gen::<f64>() * (hi - lo);
    let missing_left = rng.gen_bool(0.5);
    let col = &data.cols[feature];
    let mut left_rows = Vec::new();
    let mut right_rows = Vec::new();
    for &r in &rows {
        let go_left = if col.present[r] {
            col.values[r] <= threshold
        } else {
            missing_left
        };
        if go_left {
            left_rows.push(r);
        } else {
            right_rows.push(r);
        }
    }
    let idx = nodes.len();
    nodes.push(Node::LeafSize(0));
    let left = grow_iso(nodes, data, left_rows, depth + 1, limit, rng);
    let right = grow_iso(nodes, data, right_rows, depth + 1, limit, rng);
    nodes[idx] = Node::Split {
        feature,
        threshold,
        missing_left,
        gain: 0.0,
        left,
        right,
    };
    idx
}

/// Trains an isolation forest on an unlabeled frame. The decision threshold
/// is fixed at fit time: the `iso_contamination` quantile of the training
/// scores.
pub fn fit_isolation_forest(
    frame: &FeatureFrame,
    hp: &HyperParams,
    seed: u64,
) -> Result<TreeEnsemble, LearnError> {
    hp.validate()?;
    let n = frame.n_rows();
    if n < 2 {
        return Err(LearnError::TooFewRows(n));
    }
    let data = DataView::from_frame(frame);
    let psi = hp.iso_subsample.min(n);
    let limit = (psi as f64).log2().ceil() as usize;
    let trees: Vec<Tree> = (0..hp.tree_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, t as u64);
            let mut rows = rand::seq::index::sample(&mut rng, n, psi).into_vec();
            rows.sort_unstable();
            let mut nodes = Vec::new();
            grow_iso(&mut nodes, &data, rows, 0, limit, &mut rng);
            Tree { nodes }
        })
        .collect();
    let mut model = TreeEnsemble {
        kind: EnsembleKind::IsolationForest,
        feature_names: frame.columns().to_vec(),
        classes: vec!["benign".to_string(), "malicious".to_string()],
        trees,
        feature_gain: vec![0.0; frame.n_cols()],
        base_score: Vec::new(),
        iso_norm: average_path_length(psi),
        iso_threshold: 0.0,
        hp: hp.clone(),
        seed,
    };
    let mut train_scores = anomaly_scores(&model, frame)?;
    train_scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = ((hp.iso_contamination * n as f64).round() as usize).clamp(1, n);
    model.iso_threshold = train_scores[k - 1];
    Ok(model)
}

/// Anomaly score in (0, 1) for one row of a frame.
pub fn anomaly_score(model: &TreeEnsemble, frame: &FeatureFrame, row: usize) -> f64 {
    let mut total = 0.0;
    for tree in &model.trees {
        let (depth, leaf_size) = tree.iso_path(|f| frame.get(row, f));
        total += depth as f64 + average_path_length(leaf_size);
    }
    let mean = total / model.trees.len() as f64;
    (2.0f64).powf(-mean / model.iso_norm)
}

/// Anomaly scores for a whole frame (schema-checked).
pub fn anomaly_scores(model: &TreeEnsemble, frame: &FeatureFrame) -> Result<Vec<f64>, LearnError> {
    model.check_schema(frame)?;
    Ok((0..frame.n_rows())
        .into_par_iter()
        .map(|r| anomaly_score(model, frame, r))
        .collect())
}

pub(crate) fn predict_rows(model: &TreeEnsemble, frame: &FeatureFrame) -> Vec<usize> {
    (0..frame.n_rows())
        .into_par_iter()
        .map(|r| (anomaly_score(model, frame, r) >= model.iso_threshold) as usize)
        .collect()
}

pub(crate) fn proba_rows(model: &TreeEnsemble, frame: &FeatureFrame) -> Vec<Vec<f64>> {
    (0..frame.n_rows())
        .into_par_iter()
        .map(|r| {
            let s = anomaly_score(model, frame, r);
            vec![1.0 - s, s]
        })
        .collect()
}
