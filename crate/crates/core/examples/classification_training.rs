//! Trains a multi-label classifier for four synthetic findings (AF-like
//! rhythm, bigeminy, wide QRS, ST shift) and reports per-class and macro AUC.
//!
//! cargo run --release --example classification_training

use std::time::Instant;

use ecgcl::cl::{scratch, TaskPlan};
use ecgcl::data::{build_samples, preprocess, synth_ecg, Finding, Morphology, Preprocess, Rhythm, SynthConfig};
use ecgcl::encoder::EncoderConfig;
use ecgcl::network::TaskShape;
use ecgcl::train::{OptimConfig, OptimizerKind};

fn main() -> ecgcl::Result<()> {
    let synth = |records, seed| SynthConfig {
        fs: 100.0,
        duration_s: 10.0,
        hr_bpm: [55.0, 95.0],
        rhythms: vec![Rhythm::Regular, Rhythm::AfLike, Rhythm::Bigeminy],
        morphologies: vec![Morphology::WideQrs, Morphology::StShift],
        morphology_prob: 0.4,
        snr_db: Some(25.0),
        records,
        seed,
        ..SynthConfig::default()
    };
    let prep = Preprocess {
        band_hz: Some([0.5, 40.0]),
        window_seconds: 10.0,
    };
    let classes: Vec<u32> = [Finding::AfLike, Finding::Bigeminy, Finding::WideQrs, Finding::StShift]
        .iter()
        .map(|f| f.id())
        .collect();
    let shape = TaskShape::cls(1, classes.len(), 1000);
    let train = build_samples(&preprocess(&synth_ecg(&synth(240, 11))?, &prep)?, &shape, &classes)?;
    let test = build_samples(&preprocess(&synth_ecg(&synth(80, 12))?, &prep)?, &shape, &classes)?;
    let plan = TaskPlan {
        name: "findings-4".into(),
        shape,
        classes,
        optim: OptimConfig {
            optimizer: OptimizerKind::Adam,
            base_lr: 0.002,
            batch_size: 16,
            epochs: 20,
            warmup_epochs: 2,
            ..OptimConfig::default()
        },
        retrain_epochs: 0,
        train,
        val: vec![],
        test,
    };
    let start = Instant::now();
    let out = scratch(EncoderConfig::default(), std::slice::from_ref(&plan), 0, true)?;
    for p in &out.phases {
        println!("losses per epoch: {:?}", p.loss_per_epoch);
    }
    println!("{}", out.reports[0].to_json());
    println!("wall time {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
