//! Scratch: criterion-6 sweep (overlap 0.9, iso must fail, extra trees must not).

use theftgate::experiments::stratified_split;
use theftgate::learners::{
    anomaly_scores, fit_extra_trees, fit_isolation_forest, predict, HyperParams,
};
use theftgate::metrics::{for_rate, ConfusionCounts};
use theftgate::synthgen::{generate_frame, SynthConfig};

fn main() {
    for seed in [40u64, 41, 42, 43, 44, 45] {
        let (inf, sep, imb, feats, trees, depth) =
            (24usize, 18.0, 40.0, 1.0, 150usize, 18usize);
        let config = SynthConfig {
            users: 2,
            rows_per_user: 10000,
            overlap: 0.9,
            separation_sigma: sep,
            informative: inf,
            imbalance_ratio: imb,
            null_fraction: 0.1,
            seed,
            ..SynthConfig::default()
        };
        let (frame, truth) = generate_frame(&config).unwrap();
        let split = stratified_split(&frame, 0.75, 1).unwrap();
        let train_labels = split.train.detection_labels().unwrap();
        let test_labels = split.test.detection_labels().unwrap();
        let et_hp = HyperParams {
            tree_count: trees,
            max_depth: depth,
            min_leaf: 1,
            feature_subsample: Some(feats),
            ..HyperParams::default()
        };
        let model = fit_extra_trees(&split.train, &train_labels, &et_hp, 1).unwrap();
        let pred = predict(&model, &split.test).unwrap();
        let c = ConfusionCounts::from_predictions(&test_labels.ids, &pred);
        let et_for = for_rate(&c).unwrap();
        let iso_hp = HyperParams {
            iso_contamination: 1.0 / (1.0 + imb),
            ..HyperParams::default()
        };
        let iso = fit_isolation_forest(&split.train, &iso_hp, 1).unwrap();
        let scores = anomaly_scores(&iso, &split.test).unwrap();
        let ipred: Vec<usize> = scores
            .iter()
            .map(|&s| (s >= iso.iso_threshold()) as usize)
            .collect();
        let ic = ConfusionCounts::from_predictions(&test_labels.ids, &ipred);
        let iso_for = for_rate(&ic).unwrap();
        println!(
            "inf={inf} sep={sep} d={:.1}σ imb={imb} feats={feats} trees={trees} depth={depth}: ET FOR={et_for:.3} (<=0.2?) iso FOR={iso_for:.3} (>=0.5?)",
            truth.mean_shift_sigma
        );
    }
}
