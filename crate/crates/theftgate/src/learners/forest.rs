//! Randomized tree ensembles: random forest (bootstrap rows, per-split
//! feature subsets, exact thresholds) and extremely randomized trees (no
//! bootstrap, per-split feature subsets, uniformly random thresholds).
//!
//! Prediction is a majority vote over per-tree argmax classes; vote ties
//! resolve to the lowest class index. Trees train in parallel with
//! per-tree derived seeds and are reduced in tree order, so the fit is
//! identical under any thread count.

use rand::Rng;
use rayon::prelude::*;

use super::tree::{build_classification_tree, ClsTreeParams, ThresholdRule};
use super::{
    argmax, check_labels, DataView, EnsembleKind, HyperParams, LearnError, Node, Tree,
    TreeEnsemble,
};
use crate::ingest::{FeatureFrame, Labels};
use crate::seed::rng_for;

fn fit_forest(
    frame: &FeatureFrame,
    labels: &Labels,
    hp: &HyperParams,
    seed: u64,
    kind: EnsembleKind,
) -> Result<TreeEnsemble, LearnError> {
    hp.validate()?;
    check_labels(frame, labels)?;
    let data = DataView::from_frame(frame);
    let p = data.cols.len();
    let n = data.n_rows;
    let bootstrap = kind == EnsembleKind::RandomForest;
    let rule = if kind == EnsembleKind::RandomForest {
        ThresholdRule::Exact
    } else {
        ThresholdRule::RandomUniform
    };
    let params = ClsTreeParams {
        max_depth: hp.max_depth,
        min_leaf: hp.min_leaf,
        features_per_split: hp.features_per_split(p, false),
        rule,
        bins: hp.histogram_bins,
    };
    let fitted: Vec<(Tree, Vec<f64>)> = (0..hp.tree_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, t as u64);
            let rows: Vec<usize> = if bootstrap {
                let mut drawn: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                drawn.sort_unstable();
                drawn
            } else {
                (0..n).collect()
            };
            let mut gain = vec![0.0; p];
            let tree = build_classification_tree(
                &data,
                rows,
                &labels.ids,
                labels.n_classes(),
                &params,
                &mut rng,
                &mut gain,
            );
            (tree, gain)
        })
        .collect();
    let mut trees = Vec::with_capacity(fitted.len());
    let mut feature_gain = vec![0.0; p];
    for (tree, gain) in fitted {
        for (acc, g) in feature_gain.iter_mut().zip(&gain) {
            *acc += g;
        }
        trees.push(tree);
    }
    Ok(TreeEnsemble {
        kind,
        feature_names: frame.columns().to_vec(),
        classes: labels.classes.clone(),
        trees,
        feature_gain,
        base_score: Vec::new(),
        iso_norm: 0.0,
        iso_threshold: 0.0,
        hp: hp.clone(),
        seed,
    })
}

/// Random forest: bootstrap rows per tree, exact best split inside a random
/// per-split feature subset (√p features by default).
pub fn fit_random_forest(
    frame: &FeatureFrame,
    labels: &Labels,
    hp: &HyperParams,
    seed: u64,
) -> Result<TreeEnsemble, LearnError> {
    fit_forest(frame, labels, hp, seed, EnsembleKind::RandomForest)
}

/// Extra trees: the full sample per tree, one uniformly random threshold per
/// candidate feature, best of the subset kept.
pub fn fit_extra_trees(
    frame: &FeatureFrame,
    labels: &Labels,
    hp: &HyperParams,
    seed: u64,
) -> Result<TreeEnsemble, LearnError> {
    fit_forest(frame, labels, hp, seed, EnsembleKind::ExtraTrees)
}

fn leaf_dist<'m>(tree: &'m Tree, frame: &FeatureFrame, row: usize) -> &'m [f64] {
    match tree.descend(|f| frame.get(row, f)) {
        Node::LeafDist(dist) => dist,
        other => panic!("classification tree reached a non-distribution leaf: {other:?}"),
    }
}

/// Majority vote across trees (works for the single tree too).
pub(crate) fn predict_rows(model: &TreeEnsemble, frame: &FeatureFrame) -> Vec<usize> {
    let k = model.classes.len();
    (0..frame.n_rows())
        .into_par_iter()
        .map(|r| {
            let mut votes = vec![0u32; k];
            for tree in &model.trees {
                votes[argmax(leaf_dist(tree, frame, r))] += 1;
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate().skip(1) {
                if v > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Mean of the per-tree leaf class distributions.
pub(crate) fn proba_rows(model: &TreeEnsemble, frame: &FeatureFrame) -> Vec<Vec<f64>> {
    let k = model.classes.len();
    let t = model.trees.len() as f64;
    (0..frame.n_rows())
        .into_par_iter()
        .map(|r| {
            let mut acc = vec![0.0; k];
            for tree in &model.trees {
                for (a, d) in acc.iter_mut().zip(leaf_dist(tree, frame, r)) {
                    *a += d;
                }
            }
            for a in &mut acc {
                *a /= t;
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RowLabel;
    use crate::learners::{fit_tree, predict, predict_proba};
    use crate::telemetry::Timestamp;

    fn blob_frame(seed: u64, per_class: usize, sep: f64) -> (FeatureFrame, Labels) {
        // Two 2-D Gaussian blobs `sep` units apart.
        use rand::Rng;
        let mut rng = rng_for(seed, 0);
        let mut frame = FeatureFrame::new(vec!["x".into(), "y".into()]).unwrap();
        let mut ids = Vec::new();
        for i in 0..2 * per_class {
            let class = i % 2;
            let offset = class as f64 * sep;
            let x: f64 = rng.gen::<f64>() + offset;
            let y: f64 = rng.gen::<f64>() + offset;
            frame
                .push_row(
                    "u".into(),
                    Timestamp(i as i64),
                    Some(RowLabel::Benign),
                    &[Some(x), Some(y)],
                )
                .unwrap();
            ids.push(class);
        }
        (
            frame,
            Labels {
                ids,
                classes: vec!["a".into(), "b".into()],
            },
        )
    }

    #[test]
    fn separable_blobs_reach_zero_training_error_with_50_trees() {
        let (frame, labels) = blob_frame(3, 60, 4.0);
        let hp = HyperParams {
            tree_count: 50,
            min_leaf: 1,
            ..HyperParams::default()
        };
        for fit in [fit_extra_trees, fit_random_forest] {
            let model = fit(&frame, &labels, &hp, 11).unwrap();
            let pred = predict(&model, &frame).unwrap();
            assert_eq!(pred, labels.ids, "{:?} failed to memorize", model.kind);
        }
    }

    #[test]
    fn vote_tie_breaks_to_lowest_class_index() {
        // Two trees disagreeing 1:1 → class 0 wins.
        let (frame, labels) = blob_frame(5, 8, 0.0);
        let hp = HyperParams {
            tree_count: 2,
            max_depth: 1,
            min_leaf: 1,
            ..HyperParams::default()
        };
        let model = fit_extra_trees(&frame, &labels, &hp, 2).unwrap();
        let pred = predict(&model, &frame).unwrap();
        let proba = predict_proba(&model, &frame).unwrap();
        for (p, pr) in pred.iter().zip(&proba) {
            if (pr[0] - pr[1]).abs() < 1e-15 {
                assert_eq!(*p, 0);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (frame, labels) = blob_frame(7, 40, 1.0);
        let hp = HyperParams {
            tree_count: 20,
            ..HyperParams::default()
        };
        let model = fit_random_forest(&frame, &labels, &hp, 4).unwrap();
        for row in predict_proba(&model, &frame).unwrap() {
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forest_fit_is_seed_deterministic() {
        let (frame, labels) = blob_frame(9, 30, 1.5);
        let hp = HyperParams {
            tree_count: 8,
            ..HyperParams::default()
        };
        let a = fit_random_forest(&frame, &labels, &hp, 42).unwrap();
        let b = fit_random_forest(&frame, &labels, &hp, 42).unwrap();
        assert_eq!(a.trees, b.trees);
        let c = fit_random_forest(&frame, &labels, &hp, 43).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn collapsed_extra_trees_matches_plain_cart_partition() {
        // Unique optimal split: any threshold in (2, 8) yields the same
        // partition the exact CART midpoint (5.0) does. Seed 1 draws inside
        // that window, collapsing the randomness.
        let frame = super::super::tree::tests::frame_1d(&[
            Some(1.0),
            Some(2.0),
            Some(8.0),
            Some(9.0),
        ]);
        let labels = super::super::tree::tests::binary_labels(&[0, 0, 1, 1]);
        let hp = HyperParams {
            tree_count: 1,
            feature_subsample: Some(1.0),
            min_leaf: 1,
            ..HyperParams::default()
        };
        let et = fit_extra_trees(&frame, &labels, &hp, 1).unwrap();
        let cart = fit_tree(&frame, &labels, &hp, 0).unwrap();
        let (et_feat, et_thr) = match et.trees[0].root() {
            Node::Split {
                feature, threshold, ..
            } => (*feature, *threshold),
            other => panic!("expected split, got {other:?}"),
        };
        match cart.trees[0].root() {
            Node::Split { feature, .. } => assert_eq!(et_feat, *feature),
            other => panic!("expected split, got {other:?}"),
        }
        assert!(et_thr > 2.0 && et_thr < 8.0, "seed drew {et_thr}");
        assert_eq!(
            predict(&et, &frame).unwrap(),
            predict(&cart, &frame).unwrap()
        );
    }

    #[test]
    fn permuting_rows_permutes_predictions() {
        let (frame, labels) = blob_frame(13, 25, 2.0);
        let hp = HyperParams {
            tree_count: 10,
            ..HyperParams::default()
        };
        let model = fit_extra_trees(&frame, &labels, &hp, 6).unwrap();
        let pred = predict(&model, &frame).unwrap();
        let order: Vec<usize> = (0..frame.n_rows()).rev().collect();
        let reversed = frame.take_rows(&order);
        let pred_rev = predict(&model, &reversed).unwrap();
        for (i, &r) in order.iter().enumerate() {
            assert_eq!(pred_rev[i], pred[r]);
        }
    }
}
