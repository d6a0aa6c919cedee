//! Exact best-split search shared by the classification trees and the
//! boosted regression trees.
//!
//! Candidates are the midpoints between consecutive distinct values of a
//! feature, restricted to rows present at the node. Missing rows are routed
//! wholesale to one side; both directions are scored and the better one is
//! kept, so the missing direction is learned per split. A row goes left when
//! `value <= threshold`.

use super::Column;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub missing_left: bool,
    pub gain: f64,
}

/// Gini impurity of a class-count vector.
pub fn gini_impurity(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Count-weighted Gini gain of a (left, right) partition:
/// `N·G(parent) − N_l·G(left) − N_r·G(right)`.
fn gini_gain(parent: &[u64], left: &[u64], right: &[u64]) -> f64 {
    let n_p: u64 = parent.iter().sum();
    let n_l: u64 = left.iter().sum();
    let n_r: u64 = right.iter().sum();
    n_p as f64 * gini_impurity(parent)
        - n_l as f64 * gini_impurity(left)
        - n_r as f64 * gini_impurity(right)
}

/// Sorted (value, class) pairs for present rows plus class counts of the
/// missing rows — the working set for one feature at one node.
struct FeatureSlice {
    sorted: Vec<(f64, usize)>,
    missing_counts: Vec<u64>,
    n_missing: usize,
}

fn slice_feature(col: &Column, rows: &[usize], labels: &[usize], n_classes: usize) -> FeatureSlice {
    let mut sorted = Vec::with_capacity(rows.len());
    let mut missing_counts = vec![0u64; n_classes];
    let mut n_missing = 0;
    for &r in rows {
        if col.present[r] {
            sorted.push((col.values[r], labels[r]));
        } else {
            missing_counts[labels[r]] += 1;
            n_missing += 1;
        }
    }
    // Total order including the class id keeps ties deterministic.
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    FeatureSlice {
        sorted,
        missing_counts,
        n_missing,
    }
}

/// Indices after which a threshold candidate lies (value changes between
/// position i and i+1). With histogram binning, candidates are thinned to
/// roughly `bins` evenly spaced boundaries.
fn boundary_positions(sorted: &[(f64, usize)], bins: Option<usize>) -> Vec<usize> {
    let mut boundaries = Vec::new();
    for i in 0..sorted.len().saturating_sub(1) {
        if sorted[i + 1].0 > sorted[i].0 {
            boundaries.push(i);
        }
    }
    if let Some(bins) = bins {
        if bins > 0 && boundaries.len() > bins {
            let step = boundaries.len() as f64 / bins as f64;
            let thinned: Vec<usize> = (0..bins)
                .map(|k| boundaries[(k as f64 * step) as usize])
                .collect();
            return thinned;
        }
    }
    boundaries
}

/// Best Gini split of one feature at a node, or `None` when the feature
/// offers no valid split. `parent_counts` are the node's class counts.
pub(crate) fn best_gini_split_for_feature(
    col: &Column,
    rows: &[usize],
    labels: &[usize],
    parent_counts: &[u64],
    min_leaf: usize,
    bins: Option<usize>,
) -> Option<(f64, bool, f64)> {
    let n_classes = parent_counts.len();
    let fs = slice_feature(col, rows, labels, n_classes);
    if fs.sorted.len() < 2 {
        return None;
    }
    let boundaries = boundary_positions(&fs.sorted, bins);
    if boundaries.is_empty() {
        return None;
    }
    let mut present_total = vec![0u64; n_classes];
    for &(_, c) in &fs.sorted {
        present_total[c] += 1;
    }
    let mut best: Option<(f64, bool, f64)> = None;
    let mut prefix = vec![0u64; n_classes];
    let mut cursor = 0;
    let mut left = vec![0u64; n_classes];
    let mut right = vec![0u64; n_classes];
    for &b in &boundaries {
        while cursor <= b {
            prefix[fs.sorted[cursor].1] += 1;
            cursor += 1;
        }
        let threshold = 0.5 * (fs.sorted[b].0 + fs.sorted[b + 1].0);
        let n_left_present = b + 1;
        let n_right_present = fs.sorted.len() - n_left_present;
        // Score both missing placements.
        for missing_left in [true, false] {
            let (n_l, n_r) = if missing_left {
                (n_left_present + fs.n_missing, n_right_present)
            } else {
                (n_left_present, n_right_present + fs.n_missing)
            };
            if n_l < min_leaf || n_r < min_leaf {
                continue;
            }
            for k in 0..n_classes {
                let miss = fs.missing_counts[k];
                left[k] = prefix[k] + if missing_left { miss } else { 0 };
                right[k] = present_total[k] - prefix[k] + if missing_left { 0 } else { miss };
            }
            let gain = gini_gain(parent_counts, &left, &right);
            if gain > best.map_or(0.0, |(_, _, g)| g) && gain > 1e-12 {
                best = Some((threshold, missing_left, gain));
            }
        }
    }
    best
}

/// Gini gain of one *given* threshold (used by the extra-trees random-cut
/// variant); still learns the missing direction.
pub(crate) fn gini_gain_at_threshold(
    col: &Column,
    rows: &[usize],
    labels: &[usize],
    parent_counts: &[u64],
    threshold: f64,
    min_leaf: usize,
) -> Option<(bool, f64)> {
    let n_classes = parent_counts.len();
    let mut left_present = vec![0u64; n_classes];
    let mut right_present = vec![0u64; n_classes];
    let mut missing = vec![0u64; n_classes];
    for &r in rows {
        if col.present[r] {
            if col.values[r] <= threshold {
                left_present[labels[r]] += 1;
            } else {
                right_present[labels[r]] += 1;
            }
        } else {
            missing[labels[r]] += 1;
        }
    }
    let mut best: Option<(bool, f64)> = None;
    for missing_left in [true, false] {
        let left: Vec<u64> = (0..n_classes)
            .map(|k| left_present[k] + if missing_left { missing[k] } else { 0 })
            .collect();
        let right: Vec<u64> = (0..n_classes)
            .map(|k| right_present[k] + if missing_left { 0 } else { missing[k] })
            .collect();
        let n_l: u64 = left.iter().sum();
        let n_r: u64 = right.iter().sum();
        if (n_l as usize) < min_leaf || (n_r as usize) < min_leaf {
            continue;
        }
        let gain = gini_gain(parent_counts, &left, &right);
        if gain > best.map_or(0.0, |(_, g)| g) && gain > 1e-12 {
            best = Some((missing_left, gain));
        }
    }
    best
}

/// Best Gini split across a feature subset; deterministic tie-break by
/// evaluation order (features must be passed in ascending index order).
pub(crate) fn best_gini_split_over(
    cols: &[Column],
    features: &[usize],
    rows: &[usize],
    labels: &[usize],
    parent_counts: &[u64],
    min_leaf: usize,
    bins: Option<usize>,
) -> Option<SplitCandidate> {
    let mut best: Option<SplitCandidate> = None;
    for &f in features {
        if let Some((threshold, missing_left, gain)) =
            best_gini_split_for_feature(&cols[f], rows, labels, parent_counts, min_leaf, bins)
        {
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

/// Exact-search entry: best Gini split across *all* features of a node
/// covering `rows`.
#[cfg(test)]
pub(crate) fn best_gini_split(
    cols: &[Column],
    rows: &[usize],
    labels: &[usize],
    n_classes: usize,
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let mut parent_counts = vec![0u64; n_classes];
    for &r in rows {
        parent_counts[labels[r]] += 1;
    }
    let features: Vec<usize> = (0..cols.len()).collect();
    best_gini_split_over(cols, &features, rows, labels, &parent_counts, min_leaf, None)
}

/// Second-order (Newton) gain: `½[G_l²/(H_l+λ) + G_r²/(H_r+λ) − G²/(H+λ)]`.
fn grad_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let parent = (gl + gr).powi(2) / (hl + hr + lambda);
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent)
}

/// Best second-order split of one feature at a node.
pub(crate) fn best_grad_split_for_feature(
    col: &Column,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    min_leaf: usize,
    bins: Option<usize>,
) -> Option<(f64, bool, f64)> {
    let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    let mut g_miss = 0.0;
    let mut h_miss = 0.0;
    let mut n_miss = 0usize;
    for &r in rows {
        if col.present[r] {
            sorted.push((col.values[r], r));
        } else {
            g_miss += grad[r];
            h_miss += hess[r];
            n_miss += 1;
        }
    }
    if sorted.len() < 2 {
        return None;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let boundaries = {
        // Reuse the class-based boundary finder's shape via a local scan.
        let mut b = Vec::new();
        for i in 0..sorted.len() - 1 {
            if sorted[i + 1].0 > sorted[i].0 {
                b.push(i);
            }
        }
        if let Some(bins) = bins {
            if bins > 0 && b.len() > bins {
                let step = b.len() as f64 / bins as f64;
                b = (0..bins).map(|k| b[(k as f64 * step) as usize]).collect();
            }
        }
        b
    };
    if boundaries.is_empty() {
        return None;
    }
    let (mut g_total, mut h_total) = (g_miss, h_miss);
    for &(_, r) in &sorted {
        g_total += grad[r];
        h_total += hess[r];
    }
    let mut best: Option<(f64, bool, f64)> = None;
    let mut cursor = 0;
    let mut g_prefix = 0.0;
    let mut h_prefix = 0.0;
    for &b in &boundaries {
        while cursor <= b {
            let r = sorted[cursor].1;
            g_prefix += grad[r];
            h_prefix += hess[r];
            cursor += 1;
        }
        let threshold = 0.5 * (sorted[b].0 + sorted[b + 1].0);
        let n_left_present = b + 1;
        let n_right_present = sorted.len() - n_left_present;
        for missing_left in [true, false] {
            let (n_l, n_r, gl, hl) = if missing_left {
                (
                    n_left_present + n_miss,
                    n_right_present,
                    g_prefix + g_miss,
                    h_prefix + h_miss,
                )
            } else {
                (n_left_present, n_right_present + n_miss, g_prefix, h_prefix)
            };
            if n_l < min_leaf || n_r < min_leaf {
                continue;
            }
            let gain = grad_gain(gl, hl, g_total - gl, h_total - hl, lambda);
            if gain > best.map_or(1e-12, |(_, _, g)| g.max(1e-12)) {
                best = Some((threshold, missing_left, gain));
            }
        }
    }
    best
}

pub(crate) fn best_grad_split_over(
    cols: &[Column],
    features: &[usize],
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    min_leaf: usize,
    bins: Option<usize>,
) -> Option<SplitCandidate> {
    let mut best: Option<SplitCandidate> = None;
    for &f in features {
        if let Some((threshold, missing_left, gain)) =
            best_grad_split_for_feature(&cols[f], rows, grad, hess, lambda, min_leaf, bins)
        {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[Option<f64>]) -> Column {
        Column {
            values: values.iter().map(|v| v.unwrap_or(0.0)).collect(),
            present: values.iter().map(|v| v.is_some()).collect(),
        }
    }

    #[test]
    fn gini_of_even_two_class_node_is_half() {
        assert_eq!(gini_impurity(&[50, 50]), 0.5);
        assert_eq!(gini_impurity(&[10, 0]), 0.0);
    }

    #[test]
    fn midpoint_split_on_separable_points() {
        // 1-D points {1,2,8,9} labels {0,0,1,1} → threshold 5.0.
        let col = column(&[Some(1.0), Some(2.0), Some(8.0), Some(9.0)]);
        let labels = [0usize, 0, 1, 1];
        let rows: Vec<usize> = (0..4).collect();
        let best = best_gini_split(std::slice::from_ref(&col), &rows, &labels, 2, 1).unwrap();
        assert_eq!(best.threshold, 5.0);
        // Perfect split of 4 rows: gain = 4 * 0.5 = 2.
        assert!((best.gain - 2.0).abs() < 1e-12);
    }

    #[test]
    fn missing_direction_is_learned() {
        // The missing row is class 1: only routing it right alongside the
        // present class-1 value gives a pure split.
        let col = column(&[Some(1.0), Some(2.0), Some(10.0), None]);
        let labels = [0usize, 0, 1, 1];
        let rows: Vec<usize> = (0..4).collect();
        let best = best_gini_split(std::slice::from_ref(&col), &rows, &labels, 2, 1).unwrap();
        assert_eq!(best.threshold, 6.0);
        assert!(!best.missing_left);
        assert!((best.gain - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_yields_no_split() {
        let col = column(&[Some(3.0), Some(3.0), Some(3.0)]);
        let labels = [0usize, 1, 0];
        let rows: Vec<usize> = (0..3).collect();
        assert!(best_gini_split(std::slice::from_ref(&col), &rows, &labels, 2, 1).is_none());
    }

    #[test]
    fn min_leaf_blocks_tiny_children() {
        let col = column(&[Some(1.0), Some(2.0), Some(3.0), Some(4.0)]);
        let labels = [0usize, 1, 1, 1];
        let rows: Vec<usize> = (0..4).collect();
        let best = best_gini_split(std::slice::from_ref(&col), &rows, &labels, 2, 2);
        // The only pure split (1|234) is blocked; a 2|2 split has the best
        // remaining gain.
        let best = best.unwrap();
        assert_eq!(best.threshold, 2.5);
    }

    #[test]
    fn grad_split_prefers_gradient_separation() {
        let col = column(&[Some(1.0), Some(2.0), Some(8.0), Some(9.0)]);
        let rows: Vec<usize> = (0..4).collect();
        let grad = [-0.5, -0.5, 0.5, 0.5];
        let hess = [0.25, 0.25, 0.25, 0.25];
        let (threshold, _, gain) =
            best_grad_split_for_feature(&col, &rows, &grad, &hess, 1.0, 1, None).unwrap();
        assert_eq!(threshold, 5.0);
        // gain = 0.5*(1/1.5 + 1/1.5 - 0) = 2/3.
        assert!((gain - 2.0 / 3.0).abs() < 1e-12);
    }
}
