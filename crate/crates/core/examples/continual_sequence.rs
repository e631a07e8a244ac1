//! Four-task domain-incremental sequence: single-lead segmentation,
//! twelve-lead segmentation, few-class and many-class classification.
//! Prints the ownership table and checks that every task's fingerprint
//! survives the later tasks.
//!
//! cargo run --release --example continual_sequence

use ecgcl::cl::{run_sequence, ClModel, SparsitySchedule, TaskPlan};
use ecgcl::data::{build_samples, preprocess, synth_ecg, Finding, Morphology, Preprocess, Rhythm, SynthConfig};
use ecgcl::encoder::EncoderConfig;
use ecgcl::network::TaskShape;
use ecgcl::train::{OptimConfig, OptimizerKind};

fn plan(name: &str, shape: TaskShape, classes: Vec<u32>, synth: SynthConfig) -> ecgcl::Result<TaskPlan> {
    let prep = Preprocess {
        band_hz: Some([0.5, 40.0]),
        window_seconds: 10.0,
    };
    let samples = |cfg: &SynthConfig| -> ecgcl::Result<_> { build_samples(&preprocess(&synth_ecg(cfg)?, &prep)?, &shape, &classes) };
    let test_cfg = SynthConfig {
        records: synth.records / 3,
        seed: synth.seed + 1000,
        ..synth.clone()
    };
    Ok(TaskPlan {
        name: name.into(),
        shape,
        classes: classes.clone(),
        optim: OptimConfig {
            optimizer: OptimizerKind::Adam,
            base_lr: 0.003,
            batch_size: 16,
            epochs: 6,
            warmup_epochs: 1,
            ..OptimConfig::default()
        },
        retrain_epochs: 2,
        train: samples(&synth)?,
        val: vec![],
        test: samples(&test_cfg)?,
    })
}

fn main() -> ecgcl::Result<()> {
    let base = SynthConfig {
        fs: 100.0,
        duration_s: 10.0,
        hr_bpm: [50.0, 120.0],
        records: 90,
        snr_db: Some(20.0),
        ..SynthConfig::default()
    };
    let rich = SynthConfig {
        rhythms: vec![Rhythm::Regular, Rhythm::AfLike, Rhythm::Bigeminy],
        morphologies: vec![Morphology::WideQrs, Morphology::StShift],
        morphology_prob: 0.4,
        ..base.clone()
    };
    let ids = |f: &[Finding]| f.iter().map(|f| f.id()).collect::<Vec<_>>();
    let few = ids(&[Finding::AfLike, Finding::WideQrs]);
    let many = ids(&[Finding::SinusRhythm, Finding::AfLike, Finding::Bigeminy, Finding::WideQrs, Finding::StShift]);
    let plans = vec![
        plan("seg-1lead", TaskShape::seg(1, 1000), vec![], SynthConfig { seed: 1, ..base.clone() })?,
        plan("seg-12lead", TaskShape::seg(12, 1000), vec![], SynthConfig { seed: 2, leads: 12, ..base.clone() })?,
        plan("cls-few", TaskShape::cls(1, few.len(), 1000), few, SynthConfig { seed: 3, ..rich.clone() })?,
        plan("cls-many", TaskShape::cls(1, many.len(), 1000), many, SynthConfig { seed: 4, ..rich })?,
    ];
    let mut model = ClModel::new(EncoderConfig::default(), 7)?;
    let schedule = SparsitySchedule::proportional(plans.len());
    let out = run_sequence(&mut model, &plans, &schedule, false)?;
    println!("{}", model.owners.table(plans.len() as u8));
    for (after, end) in out.post_task.iter().zip(&out.reports) {
        println!(
            "{:12} right after training {:.4}  after all tasks {:.4}",
            end.task,
            after.headline(),
            end.headline()
        );
    }
    for rec in &model.records {
        let same = model.fingerprint(rec.id)? == rec.fingerprint;
        println!("task {} fingerprint reproduced: {same}", rec.id);
    }
    Ok(())
}
