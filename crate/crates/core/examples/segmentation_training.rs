//! Trains a single-lead R-peak segmenter on noiseless synthetic ECG and
//! reports SEN/PP/F1 on held-out records.
//!
//! cargo run --release --example segmentation_training

use std::time::Instant;

use ecgcl::cl::{scratch, TaskPlan};
use ecgcl::data::{build_samples, preprocess, synth_ecg, Preprocess, SynthConfig};
use ecgcl::encoder::EncoderConfig;
use ecgcl::network::TaskShape;
use ecgcl::train::{OptimConfig, OptimizerKind};

fn main() -> ecgcl::Result<()> {
    let synth = |records, seed| SynthConfig {
        fs: 100.0,
        duration_s: 10.0,
        hr_bpm: [50.0, 120.0],
        records,
        seed,
        ..SynthConfig::default()
    };
    let prep = Preprocess {
        band_hz: Some([0.5, 40.0]),
        window_seconds: 10.0,
    };
    let shape = TaskShape::seg(1, 1000);
    let train = build_samples(&preprocess(&synth_ecg(&synth(160, 1))?, &prep)?, &shape, &[])?;
    let test = build_samples(&preprocess(&synth_ecg(&synth(40, 2))?, &prep)?, &shape, &[])?;
    let plan = TaskPlan {
        name: "qrs-1lead".into(),
        shape,
        classes: vec![],
        optim: OptimConfig {
            optimizer: OptimizerKind::Adam,
            base_lr: 0.005,
            batch_size: 16,
            epochs: 5,
            warmup_epochs: 1,
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
