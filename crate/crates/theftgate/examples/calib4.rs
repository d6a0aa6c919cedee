//! Scratch: criterion-5 full two-stage run.

use std::time::Instant;

use theftgate::experiments::stratified_split;
use theftgate::learners::{HyperParams, LearnerKind};
use theftgate::pipeline::{evaluate_two_stage, train_two_stage};
use theftgate::synthgen::{generate_frame, SynthConfig};

fn main() {
    let config = SynthConfig {
        users: 5,
        rows_per_user: 20000,
        overlap: 0.2,
        seed: 42,
        ..SynthConfig::default()
    };
    let t0 = Instant::now();
    let (frame, _) = generate_frame(&config).unwrap();
    eprintln!("gen {:?}", t0.elapsed());
    let split = stratified_split(&frame, 0.75, 7).unwrap();
    let hp = HyperParams {
        min_leaf: 1,
        max_depth: 16,
        feature_subsample: Some(0.5),
        boosting_rounds: 60,
        learning_rate: 0.3,
        ..HyperParams::default()
    };
    let features = frame.columns().to_vec();
    let t1 = Instant::now();
    let (model, warnings) = train_two_stage(
        &split.train,
        &features,
        &features,
        LearnerKind::ExtraTrees,
        LearnerKind::GradientBoosted,
        &hp,
        7,
    )
    .unwrap();
    eprintln!("train {:?} warnings={warnings:?}", t1.elapsed());
    let t2 = Instant::now();
    let eval = evaluate_two_stage(&model, &split.test).unwrap();
    eprintln!("eval {:?}", t2.elapsed());
    let r = &eval.report;
    println!(
        "stage1: FOR={:.4} FPR={:.4}",
        r.stage1.for_rate, r.stage1.fpr_rate
    );
    if let Some(gated) = &r.stage2_gated {
        println!("stage2 gated macro-F1={:.4}", gated.macro_f1);
        for c in &gated.per_class {
            println!("  {}: f1={:.3} support={}", c.class, c.f1, c.support);
        }
    }
    if let Some(end) = &r.end_to_end {
        println!("end-to-end macro-F1={:.4}", end.macro_f1);
    }
    println!("total {:?}", t0.elapsed());
}
