//! Greedy CART construction with Gini impurity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::split::{self, SplitCandidate};
use super::{check_labels, DataView, EnsembleKind, HyperParams, LearnError, Node, Tree, TreeEnsemble};
use crate::ingest::{FeatureFrame, Labels};
use crate::seed::rng_for;

/// How a classification tree picks candidate thresholds.
#[derive(Clone, Copy, PartialEq)]
pub(crate) enum ThresholdRule {
    /// Exact best midpoint over sorted unique values.
    Exact,
    /// One uniformly random threshold per candidate feature (extra trees).
    RandomUniform,
}

pub(crate) struct ClsTreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub rule: ThresholdRule,
    pub bins: Option<usize>,
}

fn class_counts(rows: &[usize], labels: &[usize], n_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_classes];
    for &r in rows {
        counts[labels[r]] += 1;
    }
    counts
}

fn leaf_from_counts(counts: &[u64]) -> Node {
    let total: u64 = counts.iter().sum();
    let dist = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    Node::LeafDist(dist)
}

/// Candidate features for one split, ascending. Sampling without
/// replacement when the subset is proper; the full range otherwise (no RNG
/// draw, so exact trees stay RNG-free).
fn sample_features(p: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= p {
        return (0..p).collect();
    }
    let mut picked = rand::seq::index::sample(rng, p, k).into_vec();
    picked.sort_unstable();
    picked
}

fn find_split(
    data: &DataView,
    rows: &[usize],
    labels: &[usize],
    parent_counts: &[u64],
    params: &ClsTreeParams,
    rng: &mut ChaCha8Rng,
) -> Option<SplitCandidate> {
    let features = sample_features(data.cols.len(), params.features_per_split, rng);
    match params.rule {
        ThresholdRule::Exact => split::best_gini_split_over(
            &data.cols,
            &features,
            rows,
            labels,
            parent_counts,
            params.min_leaf,
            params.bins,
        ),
        ThresholdRule::RandomUniform => {
            let mut best: Option<SplitCandidate> = None;
            for &f in &features {
                let col = &data.cols[f];
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &r in rows {
                    if col.present[r] {
                        lo = lo.min(col.values[r]);
                        hi = hi.max(col.values[r]);
                    }
                }
                if !(hi > lo) {
                    continue;
                }
                let threshold = lo + rng.gen::<f64>() * (hi - lo);
                if let Some((missing_left, gain)) = split::gini_gain_at_threshold(
                    col,
                    rows,
                    labels,
                    parent_counts,
                    threshold,
                    params.min_leaf,
                ) {
                    if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                        best = Some(SplitCandidate {
                            feature: f,
                            threshold,
                            missing_left,
                            gain,
                        });
                    }
                }
            }
            best
        }
    }
}

/// Splits `rows` in place-preserving order into (left, right).
pub(crate) fn partition_rows(
    data: &DataView,
    rows: &[usize],
    candidate: &SplitCandidate,
) -> (Vec<usize>, Vec<usize>) {
    let col = &data.cols[candidate.feature];
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        let go_left = if col.present[r] {
            col.values[r] <= candidate.threshold
        } else {
            candidate.missing_left
        };
        if go_left {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    (left, right)
}

fn grow(
    nodes: &mut Vec<Node>,
    data: &DataView,
    rows: Vec<usize>,
    labels: &[usize],
    n_classes: usize,
    depth: usize,
    params: &ClsTreeParams,
    rng: &mut ChaCha8Rng,
    feature_gain: &mut [f64],
) -> usize {
    let counts = class_counts(&rows, labels, n_classes);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let can_split = depth < params.max_depth && rows.len() >= 2 * params.min_leaf && !pure;
    let candidate = if can_split {
        find_split(data, &rows, labels, &counts, params, rng)
    } else {
        None
    };
    match candidate {
        None => {
            let idx = nodes.len();
            nodes.push(leaf_from_counts(&counts));
            idx
        }
        Some(candidate) => {
            feature_gain[candidate.feature] += candidate.gain;
            let (left_rows, right_rows) = partition_rows(data, &rows, &candidate);
            let idx = nodes.len();
            nodes.push(Node::LeafSize(0)); // placeholder until children exist
            let left = grow(
                nodes, data, left_rows, labels, n_classes, depth + 1, params, rng, feature_gain,
            );
            let right = grow(
                nodes, data, right_rows, labels, n_classes, depth + 1, params, rng, feature_gain,
            );
            nodes[idx] = Node::Split {
                feature: candidate.feature,
                threshold: candidate.threshold,
                missing_left: candidate.missing_left,
                gain: candidate.gain,
                left,
                right,
            };
            idx
        }
    }
}

pub(crate) fn build_classification_tree(
    data: &DataView,
    rows: Vec<usize>,
    labels: &[usize],
    n_classes: usize,
    params: &ClsTreeParams,
    rng: &mut ChaCha8Rng,
    feature_gain: &mut [f64],
) -> Tree {
    let mut nodes = Vec::new();
    grow(
        &mut nodes,
        data,
        rows,
        labels,
        n_classes,
        0,
        params,
        rng,
        feature_gain,
    );
    Tree { nodes }
}

/// Fits a single CART decision tree: exact best (feature, midpoint) split by
/// Gini gain at every node, all features considered, missing direction
/// learned per split.
pub fn fit_tree(
    frame: &FeatureFrame,
    labels: &Labels,
    hp: &HyperParams,
    seed: u64,
) -> Result<TreeEnsemble, LearnError> {
    hp.validate()?;
    check_labels(frame, labels)?;
    let data = DataView::from_frame(frame);
    let p = data.cols.len();
    let params = ClsTreeParams {
        max_depth: hp.max_depth,
        min_leaf: hp.min_leaf,
        features_per_split: p,
        rule: ThresholdRule::Exact,
        bins: hp.histogram_bins,
    };
    let mut feature_gain = vec![0.0; p];
    let mut rng = rng_for(seed, 0);
    let tree = build_classification_tree(
        &data,
        (0..data.n_rows).collect(),
        &labels.ids,
        labels.n_classes(),
        &params,
        &mut rng,
        &mut feature_gain,
    );
    Ok(TreeEnsemble {
        kind: EnsembleKind::SingleTree,
        feature_names: frame.columns().to_vec(),
        classes: labels.classes.clone(),
        trees: vec![tree],
        feature_gain,
        base_score: Vec::new(),
        iso_norm: 0.0,
        iso_threshold: 0.0,
        hp: hp.clone(),
        seed,
    })
}
