//! Reference regimes: sequential fine-tuning without isolation, and one
//! independent model per task.

use serde::{Deserialize, Serialize};

use super::engine::{ClModel, PhaseLog, Regime, TaskPlan};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::params::ParamSpec;
use crate::train::metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Finetune,
    Scratch,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub reports: Vec<MetricsReport>,
    pub post_task: Vec<MetricsReport>,
    pub phases: Vec<PhaseLog>,
    pub storage_bytes: usize,
}

fn train_one(model: &mut ClModel, plan: &TaskPlan, phases: &mut Vec<PhaseLog>) -> Result<u8> {
    let mut rec = model.begin_task(&plan.name, plan.shape, plan.classes.clone())?;
    phases.push(model.train_task(&mut rec, plan)?);
    model.finish_task(rec)
}

/// All shared kernels trainable for every task, nothing pruned. Each task
/// keeps its own exclusive weights and statistics.
pub fn finetune(config: EncoderConfig, plans: &[TaskPlan], seed: u64, runtime: bool) -> Result<BaselineOutcome> {
    let mut model = ClModel::new(config, seed)?.with_regime(Regime::Finetune);
    let mut phases = vec![];
    let mut post_task = vec![];
    for plan in plans {
        let id = train_one(&mut model, plan, &mut phases)?;
        post_task.push(model.evaluate(model.record(id)?, &plan.test, runtime)?);
    }
    let reports = model
        .records
        .iter()
        .zip(plans)
        .map(|(r, p)| model.evaluate(r, &p.test, runtime))
        .collect::<Result<_>>()?;
    Ok(BaselineOutcome {
        reports,
        post_task,
        phases,
        storage_bytes: model.storage_bytes(),
    })
}

/// A freshly initialized model per task, trained without pruning.
pub fn scratch(config: EncoderConfig, plans: &[TaskPlan], seed: u64, runtime: bool) -> Result<BaselineOutcome> {
    let mut phases = vec![];
    let mut reports = vec![];
    let mut storage_bytes = 0;
    for (i, plan) in plans.iter().enumerate() {
        let mut model = ClModel::new(config, seed)?.with_regime(Regime::Finetune);
        let id = train_one(&mut model, plan, &mut phases)?;
        let rec = model.record(id)?;
        // Number tasks by sequence position so tables line up with the other regimes.
        let task_id = i as u8 + 1;
        phases.last_mut().expect("just trained").task_id = task_id;
        let mut report = model.evaluate(rec, &plan.test, runtime)?;
        report.task_id = task_id;
        reports.push(report);
        storage_bytes += model.network.specs(&plan.shape).iter().map(ParamSpec::numel).sum::<usize>() * 4;
    }
    Ok(BaselineOutcome {
        post_task: reports.clone(),
        reports,
        phases,
        storage_bytes,
    })
}

pub fn run_baseline(
    kind: Baseline,
    config: EncoderConfig,
    plans: &[TaskPlan],
    seed: u64,
    runtime: bool,
) -> Result<BaselineOutcome> {
    match kind {
        Baseline::Finetune => finetune(config, plans, seed, runtime),
        Baseline::Scratch => scratch(config, plans, seed, runtime),
    }
}
