//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::ops::{all_ops, full_graph, TOL};
use common::reference::{self as reference, Fm};
use common::sweeps::{self, rel};
use common::*;
use ecgcl::autograd::Mode;
use ecgcl::checkpoint::Checkpoint;
use ecgcl::cl::{finetune, run_sequence, scratch, ClModel, SparsitySchedule, TaskPlan, FREE};
use ecgcl::commands::{self, Common};
use ecgcl::data::{Finding, Morphology, Preprocess, Rhythm, SynthConfig};
use ecgcl::encoder::EncoderConfig;
use ecgcl::network::{Network, TaskShape};
use ecgcl::nn::Forward;
use ecgcl::params::{ParamSpec, ParamStore};
use ecgcl::train::{lr_at, OptimConfig};
use ecgcl::Tensor;
use serde_json::{json, Value};

type Check = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn width(c: usize, blocks: usize) -> EncoderConfig {
    EncoderConfig {
        base_channels: c,
        blocks_per_stage: blocks,
        ..EncoderConfig::default()
    }
}

fn optim(base_lr: f64, epochs: usize) -> OptimConfig {
    OptimConfig {
        base_lr,
        batch_size: 16,
        epochs,
        warmup_epochs: 1,
        ..OptimConfig::default()
    }
}

fn synth_plan(name: &str, shape: TaskShape, classes: &[u32], cfg: SynthConfig, optim: OptimConfig, test: usize) -> TaskPlan {
    let test_cfg = SynthConfig {
        records: test,
        seed: cfg.seed + 1000,
        ..cfg.clone()
    };
    TaskPlan {
        name: name.into(),
        shape,
        classes: classes.to_vec(),
        optim,
        retrain_epochs: 2,
        train: synth_samples(&cfg, &shape, classes),
        val: vec![],
        test: synth_samples(&test_cfg, &shape, classes),
    }
}

// ------------------------------------------------------------------ 1

fn gradients() -> Check {
    let trials = all_ops();
    let (seg, seg_n, seg_at) = full_graph(TaskShape::seg(2, 64), 1);
    let (cls, cls_n, cls_at) = full_graph(TaskShape::cls(1, 3, 64), 2);
    ensure(seg <= TOL, || format!("segmentation graph {seg:e} at {seg_at}"))?;
    ensure(cls <= TOL, || format!("classification graph {cls:e} at {cls_at}"))?;
    Ok(format!(
        "{trials} operator trials; full graph {} scalars, worst rel err {:.1e}",
        seg_n + cls_n,
        seg.max(cls)
    ))
}

// ------------------------------------------------------------------ 2

fn decoder_oracles() -> f64 {
    let mut worst: f64 = 0.0;
    for (c, l0, classes, seed) in [(2, 10, 3, 1), (3, 13, 5, 2)] {
        let mut r = rng(seed);
        let branches: Vec<Tensor<f64>> = (0..4)
            .map(|k| randn(&mut r, &[2, c << k, (0..k).fold(l0, |l, _: usize| l.div_ceil(2))]))
            .collect();
        let fms: Vec<Fm> = branches.iter().map(Fm::from_tensor).collect();
        for shape in [TaskShape::seg(1, 4 * l0), TaskShape::cls(1, classes, 4 * l0)] {
            let net = Network::new(width(c, 1)).unwrap();
            let store = random_store(&net, &shape, seed);
            let mut stats = random_stats(&net, &shape, seed + 1);
            let want = match shape.classes {
                1 => reference::seg_decode(&store, &fms).concat(),
                k => {
                    assert_eq!(k, classes);
                    reference::cls_decode(&net.cls.fuse, &store, &stats, &fms).concat()
                }
            };
            let mut f = Forward::new(&store, &mut stats, Mode::Eval);
            let vars: Vec<_> = branches.iter().map(|t| f.graph.input(t.clone())).collect();
            let y = match shape.classes {
                1 => net.seg.forward(&mut f, &vars).unwrap(),
                k => net.cls.forward(&mut f, &vars, k).unwrap(),
            };
            let got = f.graph.value(y);
            assert_eq!(got.len(), want.len());
            for (a, e) in got.data().iter().zip(&want) {
                worst = worst.max(rel(*a, *e));
            }
        }
    }
    worst
}

fn oracles() -> Check {
    let conv = sweeps::conv1d_sweep(200);
    let conv_t = sweeps::conv_t_sweep(200);
    let dec = decoder_oracles();
    ensure(conv <= 1e-6, || format!("conv1d rel err {conv:e}"))?;
    ensure(conv_t <= 1e-6, || format!("conv_transpose1d rel err {conv_t:e}"))?;
    ensure(dec <= 1e-6, || format!("decoder rel err {dec:e}"))?;
    ensure(sweeps::auc_sweep(300), || "macro_auc differs from the pair count".into())?;
    ensure(sweeps::match_sweep(300), || "qrs_match below the maximum matching".into())?;
    Ok(format!(
        "400 conv instances (worst {:.1e}), decoders {dec:.1e}; 300 AUC and 300 matching instances exact",
        conv.max(conv_t)
    ))
}

// ------------------------------------------------------------------ 3

fn shape_law() -> Check {
    let mut cases = 0;
    for c in [1, 2, 3, 5, 8, 12] {
        let net = Network::new(width(c, 1)).unwrap();
        for len in [32, 33, 47, 63, 64, 100, 257, 999, 1000, 2500, 5000] {
            for leads in [1, 12] {
                let shape = TaskShape::seg(leads, len);
                let store: ParamStore<f64> = random_store(&net, &shape, len as u64);
                let mut stats = net.init_stats(&shape);
                let mut f = Forward::new(&store, &mut stats, Mode::Eval);
                let x = f.graph.input(Tensor::zeros(&[1, leads, len]));
                let zs = net.encoder.forward(&mut f, x).map_err(|e| e.to_string())?;
                let got: Vec<[usize; 3]> = zs
                    .iter()
                    .map(|&z| {
                        let s = f.graph.value(z).shape();
                        [s[0], s[1], s[2]]
                    })
                    .collect();
                let want: Vec<[usize; 3]> = (0..4).map(|r| [1, c << r, len.div_ceil(4 << r)]).collect();
                ensure(got == want, || format!("C={c} L={len}: {got:?} vs {want:?}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} (C, L, leads) combinations"))
}

// ------------------------------------------------------------------ 4

fn four_tasks(seed: u64) -> Vec<TaskPlan> {
    let base = SynthConfig {
        snr_db: Some(20.0),
        ..synth_base(40, seed)
    };
    let few = [Finding::AfLike.id(), Finding::Bigeminy.id()];
    let many = [Finding::AfLike.id(), Finding::Bigeminy.id(), Finding::WideQrs.id(), Finding::StShift.id()];
    let rhythmic = SynthConfig {
        rhythms: vec![Rhythm::Regular, Rhythm::AfLike, Rhythm::Bigeminy],
        ..base.clone()
    };
    vec![
        synth_plan("qrs-1", TaskShape::seg(1, 1000), &[], base.clone(), optim(0.004, 3), 20),
        synth_plan(
            "qrs-3",
            TaskShape::seg(3, 1000),
            &[],
            SynthConfig {
                leads: 3,
                seed: seed + 1,
                ..base.clone()
            },
            optim(0.004, 3),
            20,
        ),
        synth_plan(
            "rhythm-2",
            TaskShape::cls(1, 2, 1000),
            &few,
            SynthConfig {
                seed: seed + 2,
                ..rhythmic.clone()
            },
            optim(0.003, 3),
            20,
        ),
        synth_plan(
            "findings-4",
            TaskShape::cls(1, 4, 1000),
            &many,
            SynthConfig {
                morphologies: vec![Morphology::WideQrs, Morphology::StShift],
                seed: seed + 3,
                ..rhythmic
            },
            optim(0.003, 3),
            20,
        ),
    ]
}

fn no_forgetting() -> Check {
    let plans = four_tasks(40);
    let schedule = SparsitySchedule::proportional(plans.len());
    let mut model = ClModel::new(width(8, 1), 4).unwrap();
    let mut prunes = 0;
    let mut after_task = vec![];
    for (k, plan) in plans.iter().enumerate() {
        let mut rec = model
            .begin_task(&plan.name, plan.shape, plan.classes.clone())
            .map_err(|e| e.to_string())?;
        model.train_task(&mut rec, plan).map_err(|e| e.to_string())?;
        rec.pick.check_domain(&model.owners, rec.id).map_err(|e| e.to_string())?;
        let f = schedule.fraction(k).unwrap();
        for r in model.prune(&mut rec, f).map_err(|e| e.to_string())? {
            let target = (1.0 - f) * r.pool as f64;
            ensure((r.kept as f64 - target).abs() <= 1.0, || {
                format!("{}: kept {} of {} at f={f}", r.layer, r.kept, r.pool)
            })?;
            let owned = model.owners.owners(&r.layer).unwrap().iter().filter(|&&o| o == rec.id).count();
            ensure(owned == r.kept, || format!("{}: {owned} owned, {} reported", r.layer, r.kept))?;
            prunes += 1;
        }
        model.owners.check_partition(rec.id).map_err(|e| e.to_string())?;
        model.retrain(&mut rec, plan).map_err(|e| e.to_string())?;
        let id = model.finish_task(rec).map_err(|e| e.to_string())?;
        let recd = model.record(id).unwrap();
        after_task.push(model.predict_samples(recd, &plan.test).map_err(|e| e.to_string())?);
    }
    for (rec, (plan, before)) in model.records.iter().zip(plans.iter().zip(&after_task)) {
        let fp = model.fingerprint(rec.id).map_err(|e| e.to_string())?;
        ensure(fp == rec.fingerprint, || format!("task {} fingerprint changed", rec.id))?;
        let now = model.predict_samples(rec, &plan.test).map_err(|e| e.to_string())?;
        let same = now.iter().zip(before).all(|(a, b)| {
            a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        ensure(same, || format!("task {} test outputs changed", rec.id))?;
    }
    let free = model.owners.count(FREE) as f64 / model.owners.total() as f64;
    Ok(format!(
        "4 tasks, fingerprints and test outputs bit-exact; {prunes} layer prunes checked; {:.0}% free at end",
        100.0 * free
    ))
}

// ------------------------------------------------------------------ 5

fn transfer_pair(seed: u64) -> [TaskPlan; 2] {
    let classes = [Finding::WideQrs.id(), Finding::StShift.id()];
    let shape = TaskShape::cls(1, 2, 1000);
    let morph = |rhythm, records, seed| SynthConfig {
        rhythms: vec![rhythm],
        morphologies: vec![Morphology::WideQrs, Morphology::StShift],
        morphology_prob: 0.5,
        snr_db: Some(20.0),
        ..synth_base(records, seed)
    };
    [
        synth_plan("morph-a", shape, &classes, morph(Rhythm::Regular, 120, 10 * seed + 1), optim(0.003, 6), 60),
        synth_plan("morph-b", shape, &classes, morph(Rhythm::AfLike, 24, 10 * seed + 2), optim(0.003, 4), 60),
    ]
}

fn forward_transfer() -> Check {
    let cfg = width(8, 1);
    let mut wins = 0;
    let mut rows = vec![];
    for seed in 0..5 {
        let plans = transfer_pair(seed);
        let mut model = ClModel::new(cfg, seed).unwrap();
        let cl = run_sequence(&mut model, &plans, &SparsitySchedule::proportional(2), false).map_err(|e| e.to_string())?;
        let sc = scratch(cfg, &plans, seed, false).map_err(|e| e.to_string())?;
        let (c, s) = (cl.reports[1].headline(), sc.reports[1].headline());
        wins += usize::from(c >= s);
        rows.push(format!("{c:.3}/{s:.3}"));
    }
    ensure(wins >= 4, || format!("CL ≥ scratch in {wins}/5 seeds: {}", rows.join(" ")))?;
    Ok(format!("CL ≥ scratch on task B in {wins}/5 seeds (CL/scratch AUC {})", rows.join(" ")))
}

// ------------------------------------------------------------------ 6

fn forgetting() -> Check {
    let cfg = width(8, 1);
    let classes = [Finding::AfLike.id(), Finding::WideQrs.id()];
    let mut hits = 0;
    let mut rows = vec![];
    for seed in 0..5 {
        let base = SynthConfig {
            snr_db: Some(20.0),
            ..synth_base(60, 100 + 10 * seed)
        };
        let plans = [
            synth_plan("qrs", TaskShape::seg(1, 1000), &[], base.clone(), optim(0.004, 4), 20),
            synth_plan(
                "rhythm",
                TaskShape::cls(1, 2, 1000),
                &classes,
                SynthConfig {
                    rhythms: vec![Rhythm::Regular, Rhythm::AfLike],
                    morphologies: vec![Morphology::WideQrs],
                    seed: base.seed + 1,
                    ..base
                },
                optim(0.01, 4),
                20,
            ),
        ];
        let ft = finetune(cfg, &plans, seed, false).map_err(|e| e.to_string())?;
        let (after_a, end) = (ft.post_task[0].headline(), ft.reports[0].headline());
        hits += usize::from(after_a - end >= 0.02);
        rows.push(format!("{after_a:.3}→{end:.3}"));
    }
    ensure(hits >= 4, || format!("drop ≥ 0.02 in {hits}/5 seeds: {}", rows.join(" ")))?;
    Ok(format!("task-A F1 drop ≥ 0.02 in {hits}/5 seeds ({})", rows.join(" ")))
}

// ------------------------------------------------------------------ 7

fn learnability() -> Check {
    let noiseless = SynthConfig {
        hr_bpm: [50.0, 120.0],
        ..synth_base(160, 1)
    };
    let seg = synth_plan(
        "qrs",
        TaskShape::seg(1, 1000),
        &[],
        noiseless,
        OptimConfig {
            base_lr: 0.005,
            ..optim(0.005, 5)
        },
        40,
    );
    let start = Instant::now();
    let out = scratch(width(8, 4), std::slice::from_ref(&seg), 0, false).map_err(|e| e.to_string())?;
    let seg_time = start.elapsed();
    let f1 = out.reports[0].headline();
    ensure(f1 >= 0.95, || format!("segmentation F1 {f1:.4} after 5 epochs"))?;
    ensure(seg_time <= minutes(2), || format!("segmentation took {seg_time:?}"))?;

    let classes: Vec<u32> = [Finding::AfLike, Finding::Bigeminy, Finding::WideQrs, Finding::StShift]
        .iter()
        .map(|f| f.id())
        .collect();
    let findings = SynthConfig {
        hr_bpm: [55.0, 95.0],
        rhythms: vec![Rhythm::Regular, Rhythm::AfLike, Rhythm::Bigeminy],
        morphologies: vec![Morphology::WideQrs, Morphology::StShift],
        morphology_prob: 0.4,
        snr_db: Some(25.0),
        ..synth_base(240, 11)
    };
    let cls = synth_plan(
        "findings-4",
        TaskShape::cls(1, 4, 1000),
        &classes,
        findings,
        OptimConfig {
            warmup_epochs: 2,
            ..optim(0.002, 20)
        },
        80,
    );
    let start = Instant::now();
    let out = scratch(width(8, 4), std::slice::from_ref(&cls), 0, false).map_err(|e| e.to_string())?;
    let cls_time = start.elapsed();
    let auc = out.reports[0].headline();
    ensure(auc >= 0.90, || format!("macro-AUC {auc:.4} after 20 epochs"))?;
    ensure(cls_time <= minutes(5), || format!("classification took {cls_time:?}"))?;
    Ok(format!(
        "seg F1 {f1:.4} in 5 epochs ({:.0}s); 4-class macro-AUC {auc:.4} in 20 epochs ({:.0}s), C=8",
        seg_time.as_secs_f64(),
        cls_time.as_secs_f64()
    ))
}

// ------------------------------------------------------------------ 8, 9

fn sequence_config(dir: &Path) -> std::path::PathBuf {
    let synth = |leads: usize, seed: u64| {
        json!({"fs": 100, "duration_s": 10, "leads": leads, "hr_bpm": [55, 110],
               "rhythms": ["regular", "af_like"], "snr_db": 25, "records": 20, "patients": 10, "seed": seed})
    };
    let optim = json!({"base_lr": 0.002, "batch_size": 8, "epochs": 6});
    let cfg = json!({
        "seed": 9,
        "encoder": {"base_channels": 2, "blocks_per_stage": 1},
        "tasks": [
            {"name": "qrs", "mode": "seg", "leads": 1, "data": {"synth": synth(1, 1)},
             "optim": optim, "retrain_epochs": 2},
            {"name": "rhythm", "mode": "cls", "leads": 1, "classes": [0, 1],
             "data": {"synth": synth(1, 2)}, "optim": optim, "retrain_epochs": 2}
        ]
    });
    let path = dir.join("sequence.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn train_into(config: &Path, out: &Path) -> Result<(), String> {
    let c = Common {
        config: Some(config.to_path_buf()),
        seed: None,
        out: out.to_path_buf(),
        deterministic: true,
    };
    commands::train_sequence(&c).map(drop).map_err(|e| e.to_string())
}

fn schedule() -> Check {
    let table = OptimConfig::default();
    ensure(lr_at(0, &table) == 1e-6, || format!("lr_at(0) = {}", lr_at(0, &table)))?;
    ensure(lr_at(5, &table) == table.base_lr, || format!("lr_at(5) = {}", lr_at(5, &table)))?;
    let tmp = tempfile::tempdir().unwrap();
    let cfg = sequence_config(tmp.path());
    train_into(&cfg, tmp.path())?;
    let log: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("config_log.json")).unwrap()).unwrap();
    let mut checked = 0;
    for phase in log["phases"].as_array().unwrap() {
        let lrs: Vec<f64> = serde_json::from_value(phase["lr_per_epoch"].clone()).unwrap();
        match phase["phase"].as_str().unwrap() {
            "train" => {
                ensure(lrs[0] == 1e-6 && lrs[5] == 0.002, || format!("train lrs {lrs:?}"))?;
            }
            "retrain" => {
                ensure(!lrs.is_empty() && lrs.iter().all(|&l| l == 0.0005), || format!("retrain lrs {lrs:?}"))?;
            }
            other => return Err(format!("unexpected phase {other}")),
        }
        checked += 1;
    }
    ensure(checked == 4, || format!("{checked} phases logged"))?;
    Ok("lr_at(0)=1e-6, lr_at(5)=base; logged train ramps and retrain lr 0.0005 in 4 phases".into())
}

fn persistence() -> Check {
    // in-memory model against its checkpoint
    let plans: Vec<TaskPlan> = four_tasks(90).into_iter().take(2).collect();
    let mut model = ClModel::new(width(4, 1), 9).unwrap();
    let schedule = SparsitySchedule::proportional(2);
    run_sequence(&mut model, &plans, &schedule, false).map_err(|e| e.to_string())?;
    let ck = Checkpoint {
        model,
        schedule: Some(schedule),
        preprocess: Preprocess::default(),
    };
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    ck.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let (a, b) = (&ck.model, &back.model);
    ensure(a.records == b.records && a.owners == b.owners, || "records or owners differ".into())?;
    for ((name, p), (_, q)) in a.shared.iter().zip(b.shared.iter()) {
        let same = p.values.data().iter().zip(q.values.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("{name} differs"))?;
    }
    for (rec, plan) in a.records.iter().zip(&plans) {
        let ra = a.evaluate(rec, &plan.test, false).map_err(|e| e.to_string())?;
        let rb = b.evaluate(b.record(rec.id).unwrap(), &plan.test, false).map_err(|e| e.to_string())?;
        ensure(ra.to_json() == rb.to_json(), || format!("task {} report differs after reload", rec.id))?;
    }

    // deterministic reruns of the command
    let cfg = sequence_config(tmp.path());
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    train_into(&cfg, &r1)?;
    train_into(&cfg, &r2)?;
    let mut names: Vec<String> = fs::read_dir(&r1)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for n in &names {
        ensure(fs::read(r1.join(n)).unwrap() == fs::read(r2.join(n)).unwrap(), || format!("{n} differs between reruns"))?;
    }
    Ok(format!("checkpoint reload bit-exact; {} output files byte-identical across reruns", names.len()))
}

// ------------------------------------------------------------------ 10

fn accounting() -> Check {
    let mut cases = 0;
    for c in [1, 2, 3, 4, 8, 12, 16, 18] {
        for blocks in 1..=4 {
            let net = Network::new(width(c, blocks)).unwrap();
            for leads in [1, 12] {
                for (seg, classes) in [(true, 1), (false, 2), (false, 9), (false, 71)] {
                    let shape = if seg {
                        TaskShape::seg(leads, 5000)
                    } else {
                        TaskShape::cls(leads, classes, 5000)
                    };
                    let runtime: usize = net.specs(&shape).iter().map(ParamSpec::numel).sum();
                    let closed = closed_form_count(c, blocks, leads, seg, classes);
                    ensure(runtime == closed, || format!("C={c} blocks={blocks}: {runtime} vs {closed}"))?;
                    cases += 1;
                }
            }
        }
    }
    let (c, n) = (1..=32)
        .map(|c| (c, closed_form_count(c, 4, 12, false, 9)))
        .min_by_key(|&(_, n)| n.abs_diff(790_000))
        .unwrap();
    Ok(format!(
        "{cases} configurations exact; 12-lead 9-class model at C={c}, 4 blocks: {n} parameters (C=8: {})",
        closed_form_count(8, 4, 12, false, 9)
    ))
}

// ------------------------------------------------------------------ runner

fn run(id: u32, title: &str, limit: Option<Duration>, check: fn() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(msg)
    });
    let took = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(_), Some(l)) if took > l => Err(format!("took {took:.1?}, limit {l:?}")),
        (o, _) => o,
    };
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("ACC{id:<2} {tag}  {title}: {detail} [{:.1}s]", took.as_secs_f64());
    outcome.is_ok()
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", Some(minutes(5)), gradients),
        ("oracle equivalence", None, oracles),
        ("shape law", None, shape_law),
        ("exact no-forgetting", Some(minutes(15)), no_forgetting),
        ("forward transfer", Some(minutes(20)), forward_transfer),
        ("forgetting under finetune", None, forgetting),
        ("desk-scale learnability", None, learnability),
        ("schedule conformance", None, schedule),
        ("persistence", None, persistence),
        ("parameter accounting", None, accounting),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.strip_prefix("ACC")?.parse().ok()).collect();
    let mut failed = 0;
    for (i, (title, limit, check)) in criteria.into_iter().enumerate() {
        let id = i as u32 + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        if !run(id, title, limit, check) {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
