//! Scratch calibration runs (not part of the final example set).

use std::time::Instant;

use theftgate::experiments::{density_profile, stratified_split};
use theftgate::ingest::FeatureFrame;
use theftgate::learners::{
    anomaly_scores, fit_extra_trees, fit_isolation_forest, predict, HyperParams,
};
use theftgate::metrics::{for_rate, fpr_rate, ConfusionCounts};
use theftgate::synthgen::{generate_frame, SynthConfig};

fn detector_hp() -> HyperParams {
    HyperParams {
        min_leaf: 1,
        max_depth: 16,
        feature_subsample: Some(0.5),
        ..HyperParams::default()
    }
}

fn eval_extra_trees(frame: &FeatureFrame, hp: &HyperParams, seed: u64) -> (f64, f64) {
    let split = stratified_split(frame, 0.75, seed).unwrap();
    let train_labels = split.train.detection_labels().unwrap();
    let test_labels = split.test.detection_labels().unwrap();
    let t = Instant::now();
    let model = fit_extra_trees(&split.train, &train_labels, hp, seed).unwrap();
    eprintln!("  fit: {:?}", t.elapsed());
    let pred = predict(&model, &split.test).unwrap();
    let c = ConfusionCounts::from_predictions(&test_labels.ids, &pred);
    (for_rate(&c).unwrap(), fpr_rate(&c).unwrap_or(f64::NAN))
}

fn eval_iso(frame: &FeatureFrame, hp: &HyperParams, seed: u64) -> (f64, f64) {
    let split = stratified_split(frame, 0.75, seed).unwrap();
    let test_labels = split.test.detection_labels().unwrap();
    let model = fit_isolation_forest(&split.train, hp, seed).unwrap();
    let scores = anomaly_scores(&model, &split.test).unwrap();
    let pred: Vec<usize> = scores
        .iter()
        .map(|&s| (s >= model.iso_threshold()) as usize)
        .collect();
    let c = ConfusionCounts::from_predictions(&test_labels.ids, &pred);
    (for_rate(&c).unwrap(), fpr_rate(&c).unwrap_or(f64::NAN))
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());

    if which == "anchor" || which == "all" {
        // Calibration anchor: overlap 0, null 0.2 → FOR <= 0.05.
        let config = SynthConfig {
            users: 2,
            rows_per_user: 5000,
            overlap: 0.0,
            seed: 42,
            ..SynthConfig::default()
        };
        let t = Instant::now();
        let (frame, _) = generate_frame(&config).unwrap();
        eprintln!("anchor gen: {:?} rows={}", t.elapsed(), frame.n_rows());
        let (for_r, fpr) = eval_extra_trees(&frame, &detector_hp(), 1);
        println!("anchor overlap=0.0: FOR={for_r:.4} FPR={fpr:.4} (want FOR<=0.05)");
    }

    if which == "crit5" || which == "all" {
        // Criterion 5 regime: overlap 0.2, 1:90, 5 users x 20k.
        let config = SynthConfig {
            users: 5,
            rows_per_user: 20000,
            overlap: 0.2,
            seed: 42,
            ..SynthConfig::default()
        };
        let t = Instant::now();
        let (frame, _) = generate_frame(&config).unwrap();
        eprintln!("crit5 gen: {:?} rows={} cols={}", t.elapsed(), frame.n_rows(), frame.n_cols());
        let t = Instant::now();
        let (for_r, fpr) = eval_extra_trees(&frame, &detector_hp(), 1);
        println!(
            "crit5 overlap=0.2: FOR={for_r:.4} FPR={fpr:.4} (want FOR<=0.10, FPR<=0.05), {:?}",
            t.elapsed()
        );
    }

    if which == "crit6" || which == "all" {
        // Criterion 6 regime: overlap 0.9, bumped separation.
        for sep in [12.0, 16.0, 20.0] {
            let config = SynthConfig {
                users: 2,
                rows_per_user: 10000,
                overlap: 0.9,
                separation_sigma: sep,
                null_fraction: 0.1,
                seed: 42,
                ..SynthConfig::default()
            };
            let (frame, truth) = generate_frame(&config).unwrap();
            let (et_for, _) = eval_extra_trees(&frame, &detector_hp(), 1);
            let iso_hp = HyperParams {
                iso_contamination: 0.05,
                ..HyperParams::default()
            };
            let (iso_for, iso_fpr) = eval_iso(&frame, &iso_hp, 1);
            println!(
                "crit6 overlap=0.9 sep={sep}: shift={:.2}σ extra-trees FOR={et_for:.4} (want<=0.2), iso FOR={iso_for:.4} (want>=0.5) iso FPR={iso_fpr:.4}",
                truth.mean_shift_sigma
            );
        }
    }

    if which == "density" || which == "all" {
        // Density example: overlap 0.8 → mean OVL in [0.7, 0.9].
        let config = SynthConfig {
            users: 2,
            rows_per_user: 10000,
            overlap: 0.8,
            imbalance_ratio: 9.0,
            seed: 42,
            ..SynthConfig::default()
        };
        let (frame, truth) = generate_frame(&config).unwrap();
        let profile = density_profile(&frame, &truth.informative_columns).unwrap();
        println!(
            "density overlap=0.8 (shift {:.2}σ): mean OVL={:.4} (want in [0.7, 0.9])",
            truth.mean_shift_sigma,
            profile.mean_overlap()
        );
        // Also at the 1:90 imbalance for bias reference.
        let config = SynthConfig {
            users: 2,
            rows_per_user: 10000,
            overlap: 0.8,
            seed: 42,
            ..SynthConfig::default()
        };
        let (frame, truth) = generate_frame(&config).unwrap();
        let profile = density_profile(&frame, &truth.informative_columns).unwrap();
        println!(
            "density overlap=0.8 at 1:90: mean OVL={:.4}",
            profile.mean_overlap()
        );
    }
}
