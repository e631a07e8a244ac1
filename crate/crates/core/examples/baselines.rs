//! Continual learning against the two reference regimes on a segmentation →
//! classification pair: sequential fine-tuning (forgets) and one model per
//! task (no forgetting, T times the storage).
//!
//! cargo run --release --example baselines

use ecgcl::cl::{finetune, run_sequence, scratch, ClModel, SparsitySchedule, TaskPlan};
use ecgcl::data::{build_samples, preprocess, synth_ecg, Finding, Morphology, Preprocess, Rhythm, SynthConfig};
use ecgcl::encoder::EncoderConfig;
use ecgcl::network::TaskShape;
use ecgcl::train::{MetricsReport, OptimConfig};

fn plan(name: &str, shape: TaskShape, classes: Vec<u32>, synth: SynthConfig, lr: f64) -> ecgcl::Result<TaskPlan> {
    let prep = Preprocess::default();
    let samples = |cfg: &SynthConfig| build_samples(&preprocess(&synth_ecg(cfg)?, &prep)?, &shape, &classes);
    Ok(TaskPlan {
        name: name.into(),
        shape,
        classes: classes.clone(),
        optim: OptimConfig {
            base_lr: lr,
            batch_size: 16,
            epochs: 5,
            warmup_epochs: 1,
            ..OptimConfig::default()
        },
        retrain_epochs: 3,
        train: samples(&synth)?,
        val: vec![],
        test: samples(&SynthConfig {
            records: 30,
            seed: synth.seed + 100,
            ..synth
        })?,
    })
}

fn row(label: &str, after: &[MetricsReport], end: &[MetricsReport], bytes: usize) {
    let cells: Vec<String> = after
        .iter()
        .zip(end)
        .map(|(a, e)| format!("{:.3} -> {:.3}", a.headline(), e.headline()))
        .collect();
    println!("{label:9} {:>20} {:>20} {bytes:>10}", cells[0], cells[1]);
}

fn main() -> ecgcl::Result<()> {
    let base = SynthConfig {
        fs: 100.0,
        hr_bpm: [50.0, 120.0],
        snr_db: Some(20.0),
        records: 120,
        patients: 20,
        ..SynthConfig::default()
    };
    let classes = vec![Finding::AfLike.id(), Finding::WideQrs.id()];
    let plans = vec![
        plan("qrs", TaskShape::seg(1, 1000), vec![], SynthConfig { seed: 1, ..base.clone() }, 0.004)?,
        plan(
            "rhythm",
            TaskShape::cls(1, classes.len(), 1000),
            classes,
            SynthConfig {
                seed: 2,
                rhythms: vec![Rhythm::Regular, Rhythm::AfLike],
                morphologies: vec![Morphology::WideQrs],
                ..base
            },
            0.01,
        )?,
    ];
    let config = EncoderConfig {
        blocks_per_stage: 2,
        ..EncoderConfig::default()
    };

    let mut model = ClModel::new(config, 9)?;
    let cl = run_sequence(&mut model, &plans, &SparsitySchedule::proportional(2), false)?;
    let ft = finetune(config, &plans, 9, false)?;
    let sc = scratch(config, &plans, 9, false)?;

    println!("metric right after each task -> after the whole sequence");
    println!("{:9} {:>20} {:>20} {:>10}", "regime", "qrs F1", "rhythm AUC", "bytes");
    row("cl", &cl.post_task, &cl.reports, model.storage_bytes());
    row("finetune", &ft.post_task, &ft.reports, ft.storage_bytes);
    row("scratch", &sc.post_task, &sc.reports, sc.storage_bytes);
    Ok(())
}
