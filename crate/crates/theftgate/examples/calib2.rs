//! Scratch: hyperparameter probes for the anchor regime.

use theftgate::experiments::stratified_split;
use theftgate::learners::{fit_boosted, fit_extra_trees, fit_random_forest, predict, HyperParams};
use theftgate::metrics::{for_rate, fpr_rate, ConfusionCounts};
use theftgate::synthgen::{generate_frame, SynthConfig};

fn main() {
    let config = SynthConfig {
        users: 2,
        rows_per_user: 5000,
        overlap: 0.0,
        seed: 42,
        ..SynthConfig::default()
    };
    let (frame, truth) = generate_frame(&config).unwrap();
    eprintln!(
        "rows={} malicious={} shift={}σ informative={}",
        frame.n_rows(),
        truth.malicious_rows,
        truth.mean_shift_sigma,
        truth.informative_columns.len()
    );
    let split = stratified_split(&frame, 0.75, 1).unwrap();
    let train_labels = split.train.detection_labels().unwrap();
    let test_labels = split.test.detection_labels().unwrap();

    let eval = |name: &str, model: &theftgate::learners::TreeEnsemble| {
        let on = |frame: &theftgate::ingest::FeatureFrame, labels: &theftgate::ingest::Labels| {
            let pred = predict(model, frame).unwrap();
            let c = ConfusionCounts::from_predictions(&labels.ids, &pred);
            (for_rate(&c).unwrap(), fpr_rate(&c).unwrap_or(f64::NAN))
        };
        let (train_for, train_fpr) = on(&split.train, &train_labels);
        let (test_for, test_fpr) = on(&split.test, &test_labels);
        println!(
            "{name}: train FOR={train_for:.4} FPR={train_fpr:.4} | test FOR={test_for:.4} FPR={test_fpr:.4}"
        );
    };

    let base = HyperParams::default();
    eval(
        "extra default(100tr,d12,leaf5)",
        &fit_extra_trees(&split.train, &train_labels, &base, 1).unwrap(),
    );
    let leaf1 = HyperParams {
        min_leaf: 1,
        ..base.clone()
    };
    eval(
        "extra leaf1",
        &fit_extra_trees(&split.train, &train_labels, &leaf1, 1).unwrap(),
    );
    let deep = HyperParams {
        min_leaf: 1,
        max_depth: 20,
        ..base.clone()
    };
    eval(
        "extra leaf1 d20",
        &fit_extra_trees(&split.train, &train_labels, &deep, 1).unwrap(),
    );
    let more_feats = HyperParams {
        min_leaf: 1,
        max_depth: 20,
        feature_subsample: Some(0.5),
        ..base.clone()
    };
    eval(
        "extra leaf1 d20 feats50%",
        &fit_extra_trees(&split.train, &train_labels, &more_feats, 1).unwrap(),
    );
    eval(
        "rf leaf1 d20",
        &fit_random_forest(&split.train, &train_labels, &deep, 1).unwrap(),
    );
    let boost = HyperParams {
        boosting_rounds: 60,
        max_depth: 6,
        min_leaf: 1,
        learning_rate: 0.3,
        ..base.clone()
    };
    eval(
        "boosted 60r d6",
        &fit_boosted(&split.train, &train_labels, &boost, 1).unwrap(),
    );
}
