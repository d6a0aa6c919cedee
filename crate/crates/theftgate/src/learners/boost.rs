//! Second-order gradient-boosted trees on logistic loss (binary) or softmax
//! (multiclass, one tree per class per round).
//!
//! Leaf values are the Newton step `-G / (H + λ)` times the learning rate,
//! applied at fit time, so a model's raw score is exactly its prior plus the
//! sum of the leaf values along each tree's path.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::split::{best_grad_split_over, SplitCandidate};
use super::tree::partition_rows;
use super::{
    argmax, check_labels, DataView, EnsembleKind, HyperParams, LearnError, Node, Tree,
    TreeEnsemble,
};
use crate::ingest::{FeatureFrame, Labels};
use crate::seed::rng_for;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Analytic logistic-loss derivatives at raw scores: `g = σ(raw) − y`,
/// `h = σ(raw)(1 − σ(raw))`, for the loss `Σ softplus(raw) − y·raw`.
pub fn logistic_gradients(raw: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Vec::with_capacity(raw.len());
    let mut h = Vec::with_capacity(raw.len());
    for (&r, &yi) in raw.iter().zip(y) {
        let p = sigmoid(r);
        g.push(p - yi);
        h.push((p * (1.0 - p)).max(1e-16));
    }
    (g, h)
}

/// Logistic loss for the gradient pair above.
pub(crate) fn logistic_loss(raw: &[f64], y: &[f64]) -> f64 {
    raw.iter()
        .zip(y)
        .map(|(&r, &yi)| softplus(r) - yi * r)
        .sum::<f64>()
        / raw.len() as f64
}

fn log_prior(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

struct RegParams {
    max_depth: usize,
    min_leaf: usize,
    features_per_split: usize,
    bins: Option<usize>,
    lambda: f64,
    shrinkage: f64,
}

fn sample_features(p: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= p {
        return (0..p).collect();
    }
    let mut picked = rand::seq::index::sample(rng, p, k).into_vec();
    picked.sort_unstable();
    picked
}

#[allow(clippy::too_many_arguments)]
fn grow_reg(
    nodes: &mut Vec<Node>,
    data: &DataView,
    rows: Vec<usize>,
    grad: &[f64],
    hess: &[f64],
    depth: usize,
    params: &RegParams,
    rng: &mut ChaCha8Rng,
    feature_gain: &mut [f64],
    updates: &mut [f64],
) -> usize {
    let mut g_sum = 0.0;
    let mut h_sum = 0.0;
    for &r in &rows {
        g_sum += grad[r];
        h_sum += hess[r];
    }
    let candidate: Option<SplitCandidate> = if depth < params.max_depth
        && rows.len() >= 2 * params.min_leaf
    {
        let features = sample_features(data.cols.len(), params.features_per_split, rng);
        best_grad_split_over(
            &data.cols,
            &features,
            &rows,
            grad,
            hess,
            params.lambda,
            params.min_leaf,
            params.bins,
        )
    } else {
        None
    };
    match candidate {
        None => {
            let value = params.shrinkage * (-g_sum / (h_sum + params.lambda));
            for &r in &rows {
                updates[r] = value;
            }
            let idx = nodes.len();
            nodes.push(Node::LeafValue(value));
            idx
        }
        Some(candidate) => {
            feature_gain[candidate.feature] += candidate.gain;
            let (left_rows, right_rows) = partition_rows(data, &rows, &candidate);
            let idx = nodes.len();
            nodes.push(Node::LeafSize(0));
            let left = grow_reg(
                nodes, data, left_rows, grad, hess, depth + 1, params, rng, feature_gain, updates,
            );
            let right = grow_reg(
                nodes, data, right_rows, grad, hess, depth + 1, params, rng, feature_gain, updates,
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

/// Fits the boosted model. Binary labels train one tree per round on
/// logistic gradients from a log-odds prior; with K > 2 classes each round
/// fits K trees on softmax gradients from log-frequency priors. Zero rounds
/// is legal and yields the prior-only model.
pub fn fit_boosted(
    frame: &FeatureFrame,
    labels: &Labels,
    hp: &HyperParams,
    seed: u64,
) -> Result<TreeEnsemble, LearnError> {
    hp.validate()?;
    check_labels(frame, labels)?;
    let k = labels.n_classes();
    if k < 2 {
        return Err(LearnError::BadHyperParams(
            "boosting needs at least 2 classes".to_string(),
        ));
    }
    let data = DataView::from_frame(frame);
    let n = data.n_rows;
    let p = data.cols.len();
    let params = RegParams {
        max_depth: hp.max_depth,
        min_leaf: hp.min_leaf,
        features_per_split: hp.features_per_split(p, true),
        bins: hp.histogram_bins,
        lambda: hp.l2_leaf,
        shrinkage: hp.learning_rate,
    };
    let mut feature_gain = vec![0.0; p];
    let mut trees = Vec::new();
    let base_score: Vec<f64>;
    if k == 2 {
        let y: Vec<f64> = labels.ids.iter().map(|&id| id as f64).collect();
        let positive = y.iter().sum::<f64>() / n as f64;
        let base = log_prior(positive);
        base_score = vec![base];
        let mut raw = vec![base; n];
        let mut updates = vec![0.0; n];
        for round in 0..hp.boosting_rounds {
            let (grad, hess) = logistic_gradients(&raw, &y);
            let mut rng = rng_for(seed, round as u64);
            let mut nodes = Vec::new();
            grow_reg(
                &mut nodes,
                &data,
                (0..n).collect(),
                &grad,
                &hess,
                0,
                &params,
                &mut rng,
                &mut feature_gain,
                &mut updates,
            );
            trees.push(Tree { nodes });
            for (r, u) in raw.iter_mut().zip(&updates) {
                *r += u;
            }
        }
    } else {
        let mut counts = vec![0usize; k];
        for &id in &labels.ids {
            counts[id] += 1;
        }
        base_score = counts
            .iter()
            .map(|&c| ((c as f64 / n as f64).max(1e-12)).ln())
            .collect();
        let mut raw: Vec<Vec<f64>> = (0..k).map(|c| vec![base_score[c]; n]).collect();
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let mut updates = vec![0.0; n];
        let mut probs = vec![0.0; k];
        for round in 0..hp.boosting_rounds {
            // Snapshot the probabilities once per round; all K trees of the
            // round see the same gradients.
            let mut round_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(k);
            for _ in 0..k {
                round_grads.push((vec![0.0; n], vec![0.0; n]));
            }
            for i in 0..n {
                softmax_into(&mut probs, (0..k).map(|c| raw[c][i]));
                for (c, &pc) in probs.iter().enumerate() {
                    let y = if labels.ids[i] == c { 1.0 } else { 0.0 };
                    round_grads[c].0[i] = pc - y;
                    round_grads[c].1[i] = (pc * (1.0 - pc)).max(1e-16);
                }
            }
            for (c, (g, h)) in round_grads.iter().enumerate() {
                grad.copy_from_slice(g);
                hess.copy_from_slice(h);
                let mut rng = rng_for(seed, (round * k + c) as u64);
                let mut nodes = Vec::new();
                grow_reg(
                    &mut nodes,
                    &data,
                    (0..n).collect(),
                    &grad,
                    &hess,
                    0,
                    &params,
                    &mut rng,
                    &mut feature_gain,
                    &mut updates,
                );
                trees.push(Tree { nodes });
                for (r, u) in raw[c].iter_mut().zip(&updates) {
                    *r += u;
                }
            }
        }
    }
    Ok(TreeEnsemble {
        kind: EnsembleKind::GradientBoosted,
        feature_names: frame.columns().to_vec(),
        classes: labels.classes.clone(),
        trees,
        feature_gain,
        base_score,
        iso_norm: 0.0,
        iso_threshold: 0.0,
        hp: hp.clone(),
        seed,
    })
}

fn softmax_into(out: &mut [f64], raw: impl Iterator<Item = f64>) {
    out.iter_mut().zip(raw).for_each(|(o, r)| *o = r);
    let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn leaf_value(tree: &Tree, frame: &FeatureFrame, row: usize) -> f64 {
    match tree.descend(|f| frame.get(row, f)) {
        Node::LeafValue(v) => *v,
        other => panic!("boosted tree reached a non-value leaf: {other:?}"),
    }
}

/// Raw additive scores per row: `[score]` for binary models, one score per
/// class otherwise. Exactly the prior plus the traversed leaf values.
pub(crate) fn raw_scores(model: &TreeEnsemble, frame: &FeatureFrame) -> Vec<Vec<f64>> {
    let k = model.classes.len();
    (0..frame.n_rows())
        .into_par_iter()
        .map(|r| {
            if k == 2 {
                let mut score = model.base_score[0];
                for tree in &model.trees {
                    score += leaf_value(tree, frame, r);
                }
                vec![score]
            } else {
                let mut scores = model.base_score.clone();
                for (t, tree) in model.trees.iter().enumerate() {
                    scores[t % k] += leaf_value(tree, frame, r);
                }
                scores
            }
        })
        .collect()
}

pub(crate) fn proba_rows(model: &TreeEnsemble, frame: &FeatureFrame) -> Vec<Vec<f64>> {
    let k = model.classes.len();
    raw_scores(model, frame)
        .into_iter()
        .map(|scores| {
            if k == 2 {
                let p = sigmoid(scores[0]);
                vec![1.0 - p, p]
            } else {
                let mut out = vec![0.0; k];
                softmax_into(&mut out, scores.into_iter());
                out
            }
        })
        .collect()
}

pub(crate) fn predict_rows(model: &TreeEnsemble, frame: &FeatureFrame) -> Vec<usize> {
    proba_rows(model, frame).iter().map(|p| argmax(p)).collect()
}

/// Training logloss after each round prefix (`result[r]` = loss with the
/// first `r` rounds applied; index 0 is the prior-only loss).
pub fn boosted_round_logloss(
    model: &TreeEnsemble,
    frame: &FeatureFrame,
    labels: &Labels,
) -> Result<Vec<f64>, LearnError> {
    model.check_schema(frame)?;
    check_labels(frame, labels)?;
    let k = model.classes.len();
    let n = frame.n_rows();
    let trees_per_round = if k == 2 { 1 } else { k };
    let rounds = model.trees.len() / trees_per_round;
    let mut losses = Vec::with_capacity(rounds + 1);
    if k == 2 {
        let y: Vec<f64> = labels.ids.iter().map(|&id| id as f64).collect();
        let mut raw = vec![model.base_score[0]; n];
        losses.push(logistic_loss(&raw, &y));
        for tree in &model.trees {
            for (i, r) in raw.iter_mut().enumerate() {
                *r += leaf_value(tree, frame, i);
            }
            losses.push(logistic_loss(&raw, &y));
        }
    } else {
        let mut raw: Vec<Vec<f64>> = (0..k).map(|c| vec![model.base_score[c]; n]).collect();
        let nll = |raw: &Vec<Vec<f64>>| {
            let mut probs = vec![0.0; k];
            let mut total = 0.0;
            for i in 0..n {
                softmax_into(&mut probs, (0..k).map(|c| raw[c][i]));
                total -= probs[labels.ids[i]].max(1e-300).ln();
            }
            total / n as f64
        };
        losses.push(nll(&raw));
        for round in 0..rounds {
            for c in 0..k {
                let tree = &model.trees[round * k + c];
                for (i, r) in raw[c].iter_mut().enumerate() {
                    *r += leaf_value(tree, frame, i);
                }
            }
            losses.push(nll(&raw));
        }
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RowLabel;
    use crate::learners::{predict, predict_proba};
    use crate::telemetry::Timestamp;

    fn frame_1d(values: &[f64]) -> FeatureFrame {
        let mut f = FeatureFrame::new(vec!["x".into()]).unwrap();
        for (i, v) in values.iter().enumerate() {
            f.push_row(
                "u".into(),
                Timestamp(i as i64),
                Some(RowLabel::Benign),
                &[Some(*v)],
            )
            .unwrap();
        }
        f
    }

    fn binary(ids: &[usize]) -> Labels {
        Labels {
            ids: ids.to_vec(),
            classes: vec!["benign".into(), "malicious".into()],
        }
    }

    #[test]
    fn zero_rounds_predicts_the_prior() {
        // 25% positives → every probability is the prior, 0.25.
        let frame = frame_1d(&[1.0, 2.0, 3.0, 4.0]);
        let labels = binary(&[0, 0, 0, 1]);
        let hp = HyperParams {
            boosting_rounds: 0,
            ..HyperParams::default()
        };
        let model = fit_boosted(&frame, &labels, &hp, 0).unwrap();
        assert!(model.trees.is_empty());
        for row in predict_proba(&model, &frame).unwrap() {
            assert!((row[1] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn one_round_depth_one_leaves_match_hand_newton_step() {
        // x = [1,2,8,9], y = [0,0,1,1]; prior = ln(0.5/0.5) = 0, σ(0) = 0.5.
        // Left leaf: G = 1.0, H = 0.5 → -G/(H+1) = -2/3; right mirrors.
        let frame = frame_1d(&[1.0, 2.0, 8.0, 9.0]);
        let labels = binary(&[0, 0, 1, 1]);
        let hp = HyperParams {
            boosting_rounds: 1,
            max_depth: 1,
            min_leaf: 1,
            learning_rate: 0.5,
            l2_leaf: 1.0,
            ..HyperParams::default()
        };
        let model = fit_boosted(&frame, &labels, &hp, 0).unwrap();
        let tree = &model.trees[0];
        match tree.root() {
            Node::Split {
                threshold,
                left,
                right,
                ..
            } => {
                assert_eq!(*threshold, 5.0);
                let (Node::LeafValue(l), Node::LeafValue(r)) =
                    (&tree.nodes()[*left], &tree.nodes()[*right])
                else {
                    panic!("children must be value leaves");
                };
                assert!((l - 0.5 * (-2.0 / 3.0)).abs() < 1e-12);
                assert!((r - 0.5 * (2.0 / 3.0)).abs() < 1e-12);
            }
            other => panic!("expected root split, got {other:?}"),
        }
    }

    #[test]
    fn single_leaf_round_shifts_raw_score_by_closed_form() {
        // min_leaf too large to split → one leaf per round.
        let frame = frame_1d(&[1.0, 2.0, 8.0, 9.0]);
        let labels = binary(&[0, 1, 1, 1]);
        let hp = HyperParams {
            boosting_rounds: 1,
            min_leaf: 4,
            learning_rate: 0.1,
            l2_leaf: 2.0,
            ..HyperParams::default()
        };
        let model = fit_boosted(&frame, &labels, &hp, 0).unwrap();
        let base = model.base_score[0];
        let p = sigmoid(base);
        let g_sum = 4.0 * p - 3.0;
        let h_sum = 4.0 * p * (1.0 - p);
        let expected = base + 0.1 * (-g_sum / (h_sum + 2.0));
        let raws = raw_scores(&model, &frame);
        for r in raws {
            assert!((r[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_score_is_exactly_prior_plus_leaf_values() {
        let frame = frame_1d(&[1.0, 4.0, 2.0, 8.0, 9.0, 3.0, 7.0, 6.0]);
        let labels = binary(&[0, 0, 0, 1, 1, 0, 1, 1]);
        let hp = HyperParams {
            boosting_rounds: 5,
            max_depth: 2,
            min_leaf: 1,
            ..HyperParams::default()
        };
        let model = fit_boosted(&frame, &labels, &hp, 3).unwrap();
        let raws = raw_scores(&model, &frame);
        for row in 0..frame.n_rows() {
            let mut manual = model.base_score[0];
            for tree in model.trees() {
                if let Node::LeafValue(v) = tree.descend(|f| frame.get(row, f)) {
                    manual += v;
                }
            }
            assert_eq!(manual, raws[row][0]);
        }
    }

    #[test]
    fn training_logloss_is_monotone_non_increasing() {
        let values: Vec<f64> = (0..60).map(|i| (i * 37 % 23) as f64).collect();
        let ids: Vec<usize> = values.iter().map(|v| (*v > 11.0) as usize).collect();
        let frame = frame_1d(&values);
        let labels = binary(&ids);
        let hp = HyperParams {
            boosting_rounds: 20,
            max_depth: 3,
            min_leaf: 2,
            ..HyperParams::default()
        };
        let model = fit_boosted(&frame, &labels, &hp, 5).unwrap();
        let losses = boosted_round_logloss(&model, &frame, &labels).unwrap();
        assert_eq!(losses.len(), 21);
        for w in losses.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "loss increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn multiclass_softmax_probabilities_sum_to_one_and_learn() {
        // Three separable value bands → three classes.
        let values: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ids: Vec<usize> = (0..30).map(|i| i / 10).collect();
        let frame = frame_1d(&values);
        let labels = Labels {
            ids: ids.clone(),
            classes: vec!["a".into(), "b".into(), "c".into()],
        };
        let hp = HyperParams {
            boosting_rounds: 30,
            max_depth: 3,
            min_leaf: 1,
            learning_rate: 0.3,
            ..HyperParams::default()
        };
        let model = fit_boosted(&frame, &labels, &hp, 1).unwrap();
        assert_eq!(model.trees.len(), 90);
        for row in predict_proba(&model, &frame).unwrap() {
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        assert_eq!(predict(&model, &frame).unwrap(), ids);
        let losses = boosted_round_logloss(&model, &frame, &labels).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn finite_differences_match_analytic_logistic_gradients() {
        use rand::Rng;
        let mut rng = rng_for(99, 0);
        for _ in 0..10 {
            let raw: Vec<f64> = (0..16).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..16).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let (g, _) = logistic_gradients(&raw, &y);
            let eps = 1e-5;
            for i in 0..raw.len() {
                let mut plus = raw.clone();
                plus[i] += eps;
                let mut minus = raw.clone();
                minus[i] -= eps;
                let numeric = (logistic_loss(&plus, &y) - logistic_loss(&minus, &y))
                    * raw.len() as f64
                    / (2.0 * eps);
                assert!(
                    (numeric - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3),
                    "row {i}: numeric {numeric} vs analytic {}",
                    g[i]
                );
            }
        }
    }
}
