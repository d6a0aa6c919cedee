//! Scratch: XOR-plus-noise forward-selection recovery rate over 100 seeds,
//! and the progressive-learning trend.

use rand::Rng;
use theftgate::experiments::{progressive_learning, default_fraction_grid};
use theftgate::featsel::{forward_select, MetricKind, ModelFactory};
use theftgate::ingest::{FeatureFrame, Labels, RowLabel};
use theftgate::learners::{HyperParams, LearnerKind};
use theftgate::seed::rng_for;
use theftgate::synthgen::{generate_frame, SynthConfig};
use theftgate::telemetry::Timestamp;

fn xor_dataset(rows: usize, noise: usize, seed: u64) -> (FeatureFrame, Labels) {
    let mut rng = rng_for(seed, 0);
    let mut names = vec!["xa".to_string(), "xb".to_string()];
    names.extend((0..noise).map(|i| format!("noise{i:02}")));
    let mut frame = FeatureFrame::new(names).unwrap();
    let mut ids = Vec::new();
    for i in 0..rows {
        let a = rng.gen_bool(0.5);
        let b = rng.gen_bool(0.7);
        let y = (a ^ b) as usize;
        let mut row = vec![
            Some(a as u8 as f64 + 0.2 * rng.gen::<f64>()),
            Some(b as u8 as f64 + 0.2 * rng.gen::<f64>()),
        ];
        for _ in 0..noise {
            row.push(Some(rng.gen::<f64>()));
        }
        frame
            .push_row("u0".into(), Timestamp(i as i64), Some(RowLabel::Benign), &row)
            .unwrap();
        ids.push(y);
    }
    (
        frame,
        Labels {
            ids,
            classes: vec!["benign".into(), "malicious".into()],
        },
    )
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "xor".into());
    if which == "xor" {
        let factory = ModelFactory::new(
            LearnerKind::DecisionTree,
            HyperParams {
                max_depth: 4,
                min_leaf: 2,
                ..HyperParams::default()
            },
        );
        let mut both_first = 0;
        for seed in 0..100u64 {
            let (frame, labels) = xor_dataset(800, 20, seed);
            let trace = forward_select(
                &frame,
                &labels,
                &frame.columns().to_vec(),
                &factory,
                MetricKind::MacroF1,
                1e-4,
                3,
                10,
                seed,
            )
            .unwrap();
            let first_two: Vec<&str> = trace
                .steps
                .iter()
                .take(2)
                .map(|s| s.feature.as_str())
                .collect();
            let ok = first_two.len() == 2
                && first_two.contains(&"xa")
                && first_two.contains(&"xb");
            both_first += ok as usize;
        }
        println!("xor both-first: {both_first}/100 (want >= 95)");
    }
    if which == "prog" {
        // Shared-distribution users; minimal fraction to FOR <= 0.15 should
        // be non-increasing in user count.
        let config = SynthConfig {
            users: 5,
            rows_per_user: 6000,
            overlap: 0.2,
            imbalance_ratio: 60.0,
            informative: 18,
            g: 12,
            n: 6,
            app_count: 4,
            seed: 42,
            ..SynthConfig::default()
        };
        // One generator run shares the signal map across users; split the
        // frame per user afterwards.
        let (frame, _) = generate_frame(&config).unwrap();
        let mut users: Vec<String> = (0..frame.n_rows())
            .map(|r| frame.user(r).to_string())
            .collect();
        users.dedup();
        let user_frames: Vec<FeatureFrame> = users
            .iter()
            .map(|u| {
                let rows: Vec<usize> = (0..frame.n_rows())
                    .filter(|&r| frame.user(r) == u)
                    .collect();
                frame.take_rows(&rows)
            })
            .collect();
        let hp = HyperParams {
            tree_count: 80,
            min_leaf: 1,
            max_depth: 14,
            feature_subsample: Some(0.5),
            ..HyperParams::default()
        };
        // Debug surface: FOR at a few fractions per prefix.
        {
            use theftgate::experiments::stratified_split;
            use theftgate::learners::{fit_extra_trees, predict};
            use theftgate::metrics::{for_rate, ConfusionCounts};
            for count in 1..=user_frames.len() {
                let mut pooled = user_frames[0].clone();
                for f in &user_frames[1..count] {
                    pooled.append(f).unwrap();
                }
                let holdout = stratified_split(&pooled, 0.75, 100 + count as u64).unwrap();
                let test_labels = holdout.test.detection_labels().unwrap();
                let mut line = format!("users={count}:");
                for fraction in [0.1, 0.3, 0.5, 0.7, 0.9] {
                    let sub = stratified_split(&holdout.train, fraction, 7).unwrap();
                    let tl = sub.train.detection_labels().unwrap();
                    let n_mal = sub.train.malicious_rows().len();
                    let model = fit_extra_trees(&sub.train, &tl, &hp, 3).unwrap();
                    let pred = predict(&model, &holdout.test).unwrap();
                    let c = ConfusionCounts::from_predictions(&test_labels.ids, &pred);
                    line.push_str(&format!(
                        " f{fraction}:{:.2}({n_mal}m)",
                        for_rate(&c).unwrap()
                    ));
                }
                println!("{line}");
            }
        }
        let t = std::time::Instant::now();
        let points = progressive_learning(
            &user_frames,
            LearnerKind::ExtraTrees,
            &hp,
            0.15,
            &default_fraction_grid(),
            9,
        )
        .unwrap();
        for p in &points {
            println!(
                "users={} min_fraction={:?} for={:?}",
                p.user_count, p.min_fraction, p.achieved_for
            );
        }
        println!("elapsed {:?}", t.elapsed());
    }
}
