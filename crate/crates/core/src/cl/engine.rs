use std::collections::BTreeMap;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ownership::{OwnershipMap, PickMask, SparsitySchedule, FREE};
use crate::autograd::{Mode, NormStats};
use crate::data::Sample;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::network::{Network, TaskMode, TaskShape};
use crate::nn::{Forward, StatsTable, Weights};
use crate::params::{ParamSpec, ParamStore, Parameter};
use crate::tensor::Tensor;
use crate::train::metrics::{macro_auc, qrs_match, seg_predictions, tolerance_samples, ClsMetrics, MatchCounts, MetricsReport};
use crate::train::optim::{OptimConfig, OptimizerKind, Optimizer, RETRAIN_LR};
use crate::train::schedule::lr_at;

/// Batch size used for inference; outputs do not depend on it.
pub const EVAL_BATCH: usize = 32;
/// Probe batch size for output fingerprints.
pub const PROBE_BATCH: usize = 2;
const PROBE_SEED: u64 = 0x0ec6_f1a9;

/// Environment variable holding the worker-thread count for inference.
pub const THREADS_ENV: &str = "ECGCL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PickMode {
    /// Straight-through trained scores.
    Trained,
    /// Reuse every earlier-task scalar.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PickConfig {
    pub mode: PickMode,
    /// Adam learning rate of the scores.
    pub lr: f64,
    /// Epochs at the start of training during which scores are learned.
    pub epochs: usize,
    pub init_score: f64,
}

impl Default for PickConfig {
    fn default() -> Self {
        PickConfig {
            mode: PickMode::Trained,
            lr: 1e-3,
            epochs: 5,
            init_score: 1e-2,
        }
    }
}

/// How shared kernels are treated across tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Ownership, pruning and pick masks.
    Isolated,
    /// Every task trains and reads all shared kernels (no protection).
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Training,
    Pruned,
    Complete,
}

/// Everything private to one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub id: u8,
    pub name: String,
    pub shape: TaskShape,
    /// Class IDs in output order (classification only).
    pub classes: Vec<u32>,
    pub pick: PickMask,
    pub stats: StatsTable<f32>,
    /// Biases, normalization affine parameters, lead adapter, class head.
    pub exclusive: ParamStore<f32>,
    /// Hex SHA-256 of the outputs on the probe batch, set on completion.
    pub fingerprint: String,
    pub stage: Stage,
}

/// One task of a sequence: geometry, data and optimization settings.
#[derive(Debug, Clone)]
pub struct TaskPlan {
    pub name: String,
    pub shape: TaskShape,
    pub classes: Vec<u32>,
    pub optim: OptimConfig,
    pub retrain_epochs: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Learning rates actually used by one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub task: String,
    pub task_id: u8,
    pub phase: String,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub lr_per_epoch: Vec<f64>,
    pub loss_per_epoch: Vec<f64>,
}

/// Result of pruning one kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneReport {
    pub layer: String,
    pub pool: usize,
    pub released: usize,
    pub kept: usize,
}

/// Shared kernels (masked for one task) plus that task's exclusive weights.
pub struct TaskView<'a> {
    shared: BTreeMap<String, Tensor<f32>>,
    exclusive: &'a ParamStore<f32>,
}

impl TaskView<'_> {
    pub fn shared(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.shared
    }
}

impl Weights<f32> for TaskView<'_> {
    fn weight(&self, name: &str) -> Result<Tensor<f32>> {
        match self.shared.get(name) {
            Some(t) => Ok(t.clone()),
            None => Ok(self.exclusive.get(name)?.values.clone()),
        }
    }
}

/// The network, its shared kernels with their owners, and all task records.
#[derive(Debug, Clone)]
pub struct ClModel {
    pub network: Network,
    pub shared: ParamStore<f32>,
    pub owners: OwnershipMap,
    pub records: Vec<TaskRecord>,
    pub regime: Regime,
    pub pick: PickConfig,
    pub seed: u64,
}

fn task_rng(seed: u64, task: u8, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((task as u64) << 8) | stream);
    r
}

/// Worker threads for inference, from [`THREADS_ENV`] (default 1).
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or(1)
}

/// Deterministic standard-normal input batch for a task geometry.
pub fn probe_batch(shape: &TaskShape, task: u8) -> Tensor<f32> {
    let mut r = task_rng(PROBE_SEED, task, 0);
    let n = PROBE_BATCH * shape.leads * shape.window_len;
    let data = (0..n).map(|_| r.sample::<f32, _>(StandardNormal)).collect();
    Tensor::from_vec(&[PROBE_BATCH, shape.leads, shape.window_len], data).expect("probe shape")
}

/// Hex SHA-256 over little-endian f32 bytes.
pub fn hash_f32(values: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn stack_batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let x: Vec<Tensor<f32>> = samples.iter().map(|s| s.signal.clone()).collect();
    let y: Vec<Tensor<f32>> = samples.iter().map(|s| s.target.clone()).collect();
    Ok((Tensor::stack(&x)?, Tensor::stack(&y)?))
}

impl ClModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let network = Network::new(config)?;
        let specs = network.shared_specs();
        let shared = ParamStore::init_from_specs(&specs, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(ClModel {
            owners: OwnershipMap::new(&specs),
            network,
            shared,
            records: Vec::new(),
            regime: Regime::Isolated,
            pick: PickConfig::default(),
            seed,
        })
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    pub fn with_pick(mut self, pick: PickConfig) -> Self {
        self.pick = pick;
        self
    }

    pub fn record(&self, id: u8) -> Result<&TaskRecord> {
        self.records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Lookup(format!("no task with id {id}")))
    }

    /// Shared kernels a task of this shape reads.
    pub fn task_layers(&self, shape: &TaskShape) -> Vec<String> {
        self.network
            .specs(shape)
            .into_iter()
            .filter(ParamSpec::is_shared)
            .map(|s| s.name)
            .collect()
    }

    /// Whether scalar `i` of `layer` is visible to `rec`, given optional
    /// live pick scores.
    fn visible(&self, rec: &TaskRecord, layer: &str, i: usize, owner: u8, scores: Option<&ParamStore<f32>>) -> bool {
        if self.regime == Regime::Finetune {
            return true;
        }
        let t = rec.id;
        let earlier = owner != FREE && owner < t;
        let picked = || match scores {
            Some(s) => s.get(layer).is_ok_and(|p| p.values.data()[i] > 0.0),
            None => rec.pick.get(layer, i),
        };
        match rec.stage {
            Stage::Training => owner == FREE || (earlier && picked()),
            Stage::Pruned | Stage::Complete => owner == t || (earlier && picked()),
        }
    }

    fn compose<'a>(&self, rec: &'a TaskRecord, scores: Option<&ParamStore<f32>>) -> Result<TaskView<'a>> {
        let mut shared = BTreeMap::new();
        for layer in self.task_layers(&rec.shape) {
            let w = &self.shared.get(&layer)?.values;
            let owners = self.owners.owners(&layer)?;
            let data = w
                .data()
                .iter()
                .zip(owners)
                .enumerate()
                .map(|(i, (&v, &o))| if self.visible(rec, &layer, i, o, scores) { v } else { 0.0 })
                .collect();
            shared.insert(layer, Tensor::from_vec(w.shape(), data)?);
        }
        Ok(TaskView {
            shared,
            exclusive: &rec.exclusive,
        })
    }

    /// Masked weights of task `id`: a scalar participates iff it is owned by
    /// the task or owned by an earlier task and picked; all others read 0.
    pub fn effective_weights(&self, id: u8) -> Result<TaskView<'_>> {
        let rec = self.record(id)?;
        if rec.stage != Stage::Complete {
            return Err(Error::Contract(format!("task {id} is not complete")));
        }
        self.compose(rec, None)
    }

    /// View of a task that may still be under construction.
    pub fn view<'a>(&self, rec: &'a TaskRecord) -> Result<TaskView<'a>> {
        self.compose(rec, None)
    }

    /// Creates the record for the next task: exclusive weights and
    /// statistics come from the latest earlier task with matching names and
    /// shapes, otherwise from their initializers.
    pub fn begin_task(&mut self, name: &str, shape: TaskShape, classes: Vec<u32>) -> Result<TaskRecord> {
        let id = u8::try_from(self.records.len() + 1)
            .ok()
            .filter(|&i| i != FREE)
            .ok_or_else(|| Error::config("at most 255 tasks fit the 8-bit owner ids"))?;
        if shape.mode == TaskMode::Cls && classes.len() != shape.classes {
            return Err(Error::config(format!(
                "task `{name}` declares {} classes but lists {}",
                shape.classes,
                classes.len()
            )));
        }
        if self.regime == Regime::Isolated {
            for layer in self.task_layers(&shape) {
                if !self.owners.owners(&layer)?.contains(&FREE) {
                    return Err(self.owners.capacity_error(&layer, id - 1));
                }
            }
        }
        let mut rng = task_rng(self.seed, id, 1);
        let mut exclusive = ParamStore::new();
        for spec in self.network.exclusive_specs(&shape) {
            let inherited = self.records.iter().rev().find_map(|r| {
                r.exclusive
                    .get(&spec.name)
                    .ok()
                    .filter(|p| p.values.shape() == spec.shape.as_slice())
            });
            let values = match inherited {
                Some(p) => p.values.clone(),
                None => Tensor::from_vec(&spec.shape, spec.initial_values(&mut rng))?,
            };
            exclusive.insert(&spec.name, Parameter::new(values));
        }
        let mut stats = StatsTable::new();
        for (layer, ch) in self.network.norm_layers(&shape) {
            let inherited = self
                .records
                .iter()
                .rev()
                .find_map(|r| r.stats.get(&layer).filter(|s| s.channels() == ch));
            stats.insert(layer, inherited.cloned().unwrap_or_else(|| NormStats::identity(ch)));
        }
        let pick = match self.regime {
            Regime::Isolated => {
                PickMask::all(&self.owners, id, self.task_layers(&shape).iter().map(String::as_str))?
            }
            Regime::Finetune => PickMask::empty(),
        };
        Ok(TaskRecord {
            id,
            name: name.to_string(),
            shape,
            classes,
            pick,
            stats,
            exclusive,
            fingerprint: String::new(),
            stage: Stage::Training,
        })
    }

    /// Marks which shared scalars may be updated in the record's stage.
    fn set_trainable(&mut self, rec: &TaskRecord) -> Result<()> {
        let layers = self.task_layers(&rec.shape);
        for (name, p) in self.shared.iter_mut() {
            p.zero_grad();
            if !layers.contains(name) {
                p.set_trainable(false);
                continue;
            }
            let owners = self.owners.owners(name)?;
            for (flag, &o) in p.trainable.iter_mut().zip(owners) {
                *flag = match (self.regime, rec.stage) {
                    (Regime::Finetune, _) => true,
                    (Regime::Isolated, Stage::Training) => o == FREE,
                    (Regime::Isolated, _) => o == rec.id,
                };
            }
        }
        Ok(())
    }

    /// One optimization pass over `samples` with a fixed view composition.
    #[allow(clippy::too_many_arguments)]
    fn epoch(
        &mut self,
        rec: &mut TaskRecord,
        samples: &[Sample],
        batch_size: usize,
        opt: &mut Optimizer<f32>,
        lr: f64,
        mut scores: Option<(&mut ParamStore<f32>, &mut Optimizer<f32>, f64)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::config(format!("task `{}` has no training samples", rec.name)));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, y) = stack_batch(&batch)?;
            let live = scores.as_ref().map(|(s, _, _)| &**s);
            let mut stats = std::mem::take(&mut rec.stats);
            let view = self.compose(rec, live)?;
            let mut f = Forward::new(&view, &mut stats, Mode::Train);
            let xv = f.graph.input(x);
            let out = self.network.forward(&mut f, xv, &rec.shape)?;
            let loss = f.graph.bce(out, &y)?;
            total += f.graph.value(loss).data()[0] as f64;
            let grads = f.named_grads(loss)?;
            drop(f);
            drop(view);
            rec.stats = stats;
            rec.exclusive.zero_grad();
            self.shared.iter_mut().for_each(|(_, p)| p.zero_grad());
            if let Some((s, _, _)) = scores.as_mut() {
                s.zero_grad();
            }
            for (name, g) in &grads {
                if let Ok(p) = rec.exclusive.get_mut(name) {
                    p.accumulate(g.data());
                    continue;
                }
                self.shared.get_mut(name)?.accumulate(g.data());
                if let Some((s, _, _)) = scores.as_mut() {
                    // straight-through: d score = d w_eff * w
                    if let Ok(p) = s.get_mut(name) {
                        let w = self.shared.get(name)?.values.data();
                        let sg: Vec<f32> = g.data().iter().zip(w).map(|(a, b)| a * b).collect();
                        p.accumulate(&sg);
                    }
                }
            }
            opt.begin_step();
            opt.apply(&mut self.shared, lr);
            opt.apply(&mut rec.exclusive, lr);
            if let Some((s, so, slr)) = scores.as_mut() {
                so.begin_step();
                so.apply(s, *slr);
            }
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    fn score_store(&self, rec: &TaskRecord) -> Result<ParamStore<f32>> {
        let mut s = ParamStore::new();
        for (name, bits) in rec.pick.layers() {
            let shape = self.shared.get(name)?.values.shape().to_vec();
            let init = self.pick.init_score as f32;
            let values: Vec<f32> = bits.iter().map(|&b| if b { init } else { 0.0 }).collect();
            let mut p = Parameter::new(Tensor::from_vec(&shape, values)?);
            p.trainable = bits.clone();
            s.insert(name, p);
        }
        Ok(s)
    }

    /// Trains FREE scalars (and the task's exclusive weights) on the plan's
    /// training set with the warm-up schedule. Earlier-task scalars are read
    /// through the pick mask and never updated. With trained picking, the
    /// mask scores are learned during the first epochs and then frozen.
    pub fn train_task(&mut self, rec: &mut TaskRecord, plan: &TaskPlan) -> Result<PhaseLog> {
        if rec.stage != Stage::Training {
            return Err(Error::Contract(format!("task {} is past its training stage", rec.id)));
        }
        plan.optim.validate()?;
        self.set_trainable(rec)?;
        let learn_pick = self.regime == Regime::Isolated
            && self.pick.mode == PickMode::Trained
            && rec.pick.count() > 0
            && self.pick.epochs > 0;
        let mut scores = if learn_pick { Some(self.score_store(rec)?) } else { None };
        let mut score_opt = Optimizer::new(&OptimConfig {
            optimizer: OptimizerKind::Adam,
            ..OptimConfig::default()
        });
        let mut opt = Optimizer::new(&plan.optim);
        let mut rng = task_rng(self.seed, rec.id, 2);
        let mut log = PhaseLog {
            task: rec.name.clone(),
            task_id: rec.id,
            phase: "train".into(),
            optimizer: plan.optim.optimizer,
            batch_size: plan.optim.batch_size,
            lr_per_epoch: vec![],
            loss_per_epoch: vec![],
        };
        for epoch in 0..plan.optim.epochs {
            let lr = lr_at(epoch, &plan.optim);
            let pick_lr = self.pick.lr;
            let live = match scores.as_mut() {
                Some(s) if epoch < self.pick.epochs => Some((s, &mut score_opt, pick_lr)),
                _ => None,
            };
            let loss = self.epoch(rec, &plan.train, plan.optim.batch_size, &mut opt, lr, live, &mut rng)?;
            if epoch + 1 == self.pick.epochs {
                if let Some(s) = scores.take() {
                    rec.pick = freeze_scores(&rec.pick, &s)?;
                }
            }
            info!("task {} `{}` train epoch {epoch}: lr {lr:.3e} loss {loss:.5}", rec.id, rec.name);
            log.lr_per_epoch.push(lr);
            log.loss_per_epoch.push(loss);
        }
        if let Some(s) = scores.take() {
            rec.pick = freeze_scores(&rec.pick, &s)?;
        }
        rec.pick.check_domain(&self.owners, rec.id)?;
        Ok(log)
    }

    /// Per kernel, releases the `fraction` smallest-magnitude scalars the
    /// task trained (they are zeroed and stay FREE) and assigns the rest to
    /// the task.
    pub fn prune(&mut self, rec: &mut TaskRecord, fraction: f64) -> Result<Vec<PruneReport>> {
        if rec.stage != Stage::Training {
            return Err(Error::Contract(format!("task {} was already pruned", rec.id)));
        }
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::config(format!("prune fraction {fraction} outside [0, 1)")));
        }
        let mut reports = Vec::new();
        for layer in self.task_layers(&rec.shape) {
            let values = self.shared.get_mut(&layer)?.values.data_mut();
            let owners = self.owners.owners_mut(&layer)?;
            let mut pool: Vec<usize> = (0..owners.len()).filter(|&i| owners[i] == FREE).collect();
            let n = pool.len();
            let release = if n < 2 {
                warn!("`{layer}` has {n} trainable scalar(s); pruning skipped");
                0
            } else {
                ((fraction * n as f64).round() as usize).min(n - 1)
            };
            pool.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
            for (rank, &i) in pool.iter().enumerate() {
                if rank < release {
                    values[i] = 0.0;
                } else {
                    owners[i] = rec.id;
                }
            }
            reports.push(PruneReport {
                layer,
                pool: n,
                released: release,
                kept: n - release,
            });
        }
        rec.stage = Stage::Pruned;
        self.owners.check_partition(rec.id)?;
        Ok(reports)
    }

    /// Fine-tunes only the scalars the task now owns, at the fixed retrain rate.
    pub fn retrain(&mut self, rec: &mut TaskRecord, plan: &TaskPlan) -> Result<PhaseLog> {
        if rec.stage != Stage::Pruned {
            return Err(Error::Contract(format!("task {} must be pruned before retraining", rec.id)));
        }
        self.set_trainable(rec)?;
        let mut opt = Optimizer::new(&plan.optim);
        let mut rng = task_rng(self.seed, rec.id, 3);
        let mut log = PhaseLog {
            task: rec.name.clone(),
            task_id: rec.id,
            phase: "retrain".into(),
            optimizer: plan.optim.optimizer,
            batch_size: plan.optim.batch_size,
            lr_per_epoch: vec![],
            loss_per_epoch: vec![],
        };
        for epoch in 0..plan.retrain_epochs {
            let loss = self.epoch(rec, &plan.train, plan.optim.batch_size, &mut opt, RETRAIN_LR, None, &mut rng)?;
            info!("task {} `{}` retrain epoch {epoch}: lr {RETRAIN_LR:.3e} loss {loss:.5}", rec.id, rec.name);
            log.lr_per_epoch.push(RETRAIN_LR);
            log.loss_per_epoch.push(loss);
        }
        Ok(log)
    }

    /// Freezes the record: snapshots its fingerprint and stores it.
    pub fn finish_task(&mut self, mut rec: TaskRecord) -> Result<u8> {
        if self.regime == Regime::Isolated && rec.stage != Stage::Pruned {
            return Err(Error::Contract(format!("task {} finished without pruning", rec.id)));
        }
        rec.stage = Stage::Complete;
        rec.exclusive.zero_grad();
        self.shared.iter_mut().for_each(|(_, p)| {
            p.zero_grad();
            p.set_trainable(false);
        });
        rec.fingerprint = self.fingerprint_of(&rec)?;
        let id = rec.id;
        self.records.push(rec);
        Ok(id)
    }

    fn fingerprint_of(&self, rec: &TaskRecord) -> Result<String> {
        let view = self.view(rec)?;
        let y = self
            .network
            .predict(&view, &rec.stats, probe_batch(&rec.shape, rec.id), &rec.shape)?;
        Ok(hash_f32(y.data()))
    }

    /// Fingerprint of a completed task recomputed from the current store.
    pub fn fingerprint(&self, id: u8) -> Result<String> {
        self.fingerprint_of(self.record(id)?)
    }

    /// Eval-mode outputs, one tensor per sample, computed in fixed-size
    /// batches across [`thread_count`] workers.
    pub fn predict_samples(&self, rec: &TaskRecord, samples: &[Sample]) -> Result<Vec<Tensor<f32>>> {
        let view = self.view(rec)?;
        let batches: Vec<&[Sample]> = samples.chunks(EVAL_BATCH).collect();
        let run = |b: &[Sample]| -> Result<Vec<Tensor<f32>>> {
            let refs: Vec<&Sample> = b.iter().collect();
            let (x, _) = stack_batch(&refs)?;
            let y = self.network.predict(&view, &rec.stats, x, &rec.shape)?;
            Ok((0..b.len()).map(|i| y.item(i)).collect())
        };
        let threads = thread_count().min(batches.len()).max(1);
        let mut out = Vec::with_capacity(samples.len());
        if threads == 1 {
            for b in &batches {
                out.extend(run(b)?);
            }
            return Ok(out);
        }
        let per = batches.len().div_ceil(threads);
        let results: Vec<Result<Vec<Tensor<f32>>>> = std::thread::scope(|sc| {
            let handles: Vec<_> = batches
                .chunks(per)
                .map(|group| {
                    let run = &run;
                    sc.spawn(move || -> Result<Vec<Tensor<f32>>> {
                        let mut v = Vec::new();
                        for b in group {
                            v.extend(run(b)?);
                        }
                        Ok(v)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Metrics of `rec` on `samples`. `runtime` adds wall-clock seconds.
    pub fn evaluate(&self, rec: &TaskRecord, samples: &[Sample], runtime: bool) -> Result<MetricsReport> {
        let start = Instant::now();
        let outputs = self.predict_samples(rec, samples)?;
        let (segmentation, classification) = match rec.shape.mode {
            TaskMode::Seg => {
                let mut c = MatchCounts::default();
                for (s, y) in samples.iter().zip(&outputs) {
                    let pred = seg_predictions(y.data());
                    c += qrs_match(&pred, &s.qrs, tolerance_samples(s.fs));
                }
                (Some(c.into()), None)
            }
            TaskMode::Cls => {
                let k = rec.shape.classes;
                let scores: Vec<Vec<f64>> = (0..k)
                    .map(|j| outputs.iter().map(|y| y.data()[j] as f64).collect())
                    .collect();
                let labels: Vec<Vec<bool>> = (0..k)
                    .map(|j| samples.iter().map(|s| s.target.data()[j] > 0.5).collect())
                    .collect();
                let (per_class_auc, macro_auc) = macro_auc(&scores, &labels);
                (
                    None,
                    Some(ClsMetrics {
                        per_class_auc,
                        macro_auc,
                    }),
                )
            }
        };
        Ok(MetricsReport {
            task: rec.name.clone(),
            task_id: rec.id,
            mode: rec.shape.mode,
            samples: samples.len(),
            segmentation,
            classification,
            parameter_count: self.network.specs(&rec.shape).iter().map(ParamSpec::numel).sum(),
            runtime_seconds: runtime.then(|| start.elapsed().as_secs_f64()),
        })
    }

    /// Bytes needed to store the model: shared values, owner ids, pick bits
    /// and every task's exclusive weights and statistics.
    pub fn storage_bytes(&self) -> usize {
        let shared = self.shared.numel() * 4;
        let owners = self.owners.total();
        let per_task: usize = self
            .records
            .iter()
            .map(|r| {
                r.exclusive.numel() * 4
                    + r.pick.layers().map(|(_, b)| b.len().div_ceil(8)).sum::<usize>()
                    + r.stats.values().map(|s| s.channels() * 8).sum::<usize>()
            })
            .sum();
        shared + owners + per_task
    }
}

fn freeze_scores(pick: &PickMask, scores: &ParamStore<f32>) -> Result<PickMask> {
    let mut bits = BTreeMap::new();
    for (name, old) in pick.layers() {
        let s = scores.get(name)?.values.data();
        bits.insert(name.clone(), old.iter().zip(s).map(|(&b, &v)| b && v > 0.0).collect());
    }
    Ok(PickMask::from_bits(bits))
}

/// Output of a full sequence.
#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    /// Every task evaluated on its test set after all tasks were learned.
    pub reports: Vec<MetricsReport>,
    /// Every task evaluated on its test set right after it was learned.
    pub post_task: Vec<MetricsReport>,
    pub phases: Vec<PhaseLog>,
    pub prunes: Vec<Vec<PruneReport>>,
}

/// Train → prune → retrain for each task in order, then evaluates every
/// task with its own record.
pub fn run_sequence(
    model: &mut ClModel,
    plans: &[TaskPlan],
    schedule: &SparsitySchedule,
    runtime: bool,
) -> Result<SequenceOutcome> {
    if model.regime == Regime::Isolated {
        schedule.validate(plans.len())?;
    }
    let mut out = SequenceOutcome {
        reports: vec![],
        post_task: vec![],
        phases: vec![],
        prunes: vec![],
    };
    let mut free_before = model.owners.count(FREE);
    for (k, plan) in plans.iter().enumerate() {
        let mut rec = model.begin_task(&plan.name, plan.shape, plan.classes.clone())?;
        out.phases.push(model.train_task(&mut rec, plan)?);
        if model.regime == Regime::Isolated {
            out.prunes.push(model.prune(&mut rec, schedule.fraction(k)?)?);
            out.phases.push(model.retrain(&mut rec, plan)?);
        }
        let id = model.finish_task(rec)?;
        let free = model.owners.count(FREE);
        if free > free_before {
            return Err(Error::Contract("FREE capacity grew across tasks".into()));
        }
        free_before = free;
        info!("task {id} `{}` done; FREE scalars left: {free}", plan.name);
        out.post_task.push(model.evaluate(model.record(id)?, &plan.test, runtime)?);
    }
    for (rec, plan) in model.records.iter().zip(plans) {
        out.reports.push(model.evaluate(rec, &plan.test, runtime)?);
    }
    Ok(out)
}
