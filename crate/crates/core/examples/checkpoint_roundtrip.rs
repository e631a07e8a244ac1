//! Trains a two-task sequence, saves it, loads it back and checks that every
//! task's outputs are reproduced exactly from the file.
//!
//! cargo run --release --example checkpoint_roundtrip

use ecgcl::checkpoint::Checkpoint;
use ecgcl::cl::{run_sequence, ClModel, SparsitySchedule, TaskPlan};
use ecgcl::data::{build_samples, preprocess, synth_ecg, Finding, Morphology, Preprocess, SynthConfig};
use ecgcl::encoder::EncoderConfig;
use ecgcl::network::TaskShape;
use ecgcl::train::OptimConfig;

fn plan(name: &str, shape: TaskShape, classes: Vec<u32>, synth: SynthConfig) -> ecgcl::Result<TaskPlan> {
    let samples = build_samples(&preprocess(&synth_ecg(&synth)?, &Preprocess::default())?, &shape, &classes)?;
    let (train, test) = samples.split_at(samples.len() * 3 / 4);
    Ok(TaskPlan {
        name: name.into(),
        shape,
        classes,
        optim: OptimConfig {
            base_lr: 0.003,
            batch_size: 8,
            epochs: 3,
            warmup_epochs: 1,
            ..OptimConfig::default()
        },
        retrain_epochs: 1,
        train: train.to_vec(),
        val: vec![],
        test: test.to_vec(),
    })
}

fn main() -> ecgcl::Result<()> {
    let base = SynthConfig {
        fs: 100.0,
        records: 32,
        snr_db: Some(20.0),
        ..SynthConfig::default()
    };
    let plans = vec![
        plan("qrs", TaskShape::seg(1, 1000), vec![], SynthConfig { seed: 1, ..base.clone() })?,
        plan(
            "wide-qrs",
            TaskShape::cls(1, 1, 1000),
            vec![Finding::WideQrs.id()],
            SynthConfig {
                seed: 2,
                morphologies: vec![Morphology::WideQrs],
                ..base
            },
        )?,
    ];
    let config = EncoderConfig {
        blocks_per_stage: 1,
        ..EncoderConfig::default()
    };
    let mut model = ClModel::new(config, 3)?;
    let schedule = SparsitySchedule::proportional(plans.len());
    let out = run_sequence(&mut model, &plans, &schedule, false)?;

    let ck = Checkpoint {
        model,
        schedule: Some(schedule),
        preprocess: Preprocess::default(),
    };
    let path = std::env::temp_dir().join("ecgcl-example.ecgcl");
    ck.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!("{} bytes written to {}", std::fs::metadata(&path).map_or(0, |m| m.len()), path.display());

    for (rec, plan) in loaded.model.records.iter().zip(&plans) {
        let before = &out.reports[usize::from(rec.id) - 1];
        let after = loaded.model.evaluate(rec, &plan.test, false)?;
        println!(
            "task {} `{}`: fingerprint {} | report identical: {}",
            rec.id,
            rec.name,
            if loaded.model.fingerprint(rec.id)? == rec.fingerprint { "matches" } else { "DIFFERS" },
            before.to_json() == after.to_json()
        );
    }
    let again = loaded.to_bytes()?;
    println!("re-serialized file identical: {}", again == ck.to_bytes()?);
    Ok(())
}
