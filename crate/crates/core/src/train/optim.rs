use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

/// Learning rate used by every prune-retrain phase.
pub const RETRAIN_LR: f64 = 0.0005;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    pub base_lr: f64,
    pub momentum: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub warmup_start_lr: f64,
    pub halve_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            optimizer: OptimizerKind::Adam,
            base_lr: 0.001,
            momentum: 0.9,
            betas: (0.9, 0.999),
            batch_size: 64,
            epochs: 50,
            warmup_epochs: 5,
            warmup_start_lr: 1e-6,
            halve_every: 30,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::config("base_lr must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum (`v ← μv + g; w ← w − lr·v`). Frozen
/// entries are left untouched, including their velocity.
pub fn sgd_step<T: Real>(
    values: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    trainable: &[bool],
    lr: T,
    momentum: T,
) {
    for i in 0..values.len() {
        if !trainable[i] {
            continue;
        }
        velocity[i] = momentum * velocity[i] + grads[i];
        values[i] -= lr * velocity[i];
    }
}

/// Bias-corrected Adam update; `step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    values: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    trainable: &[bool],
    lr: T,
    betas: (T, T),
    step: u64,
) {
    debug_assert!(step >= 1);
    let (b1, b2) = betas;
    let c1 = T::one() - b1.powi(step as i32);
    let c2 = T::one() - b2.powi(step as i32);
    let eps = T::of(ADAM_EPS);
    for i in 0..values.len() {
        if !trainable[i] {
            continue;
        }
        let g = grads[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        values[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[derive(Debug, Clone, Default)]
struct Slot<T> {
    a: Vec<T>,
    b: Vec<T>,
}

/// Stateful optimizer over one or more [`ParamStore`]s, state keyed by name.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    momentum: f64,
    betas: (f64, f64),
    steps: u64,
    state: BTreeMap<String, Slot<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: &OptimConfig) -> Self {
        Optimizer {
            kind: config.optimizer,
            momentum: config.momentum,
            betas: config.betas,
            steps: 0,
            state: BTreeMap::new(),
        }
    }

    /// Advances the shared step counter; call once per minibatch before [`Self::apply`].
    pub fn begin_step(&mut self) {
        self.steps += 1;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter of `store` from its accumulated gradient.
    pub fn apply(&mut self, store: &mut ParamStore<T>, lr: f64) {
        let lr = T::of(lr);
        let step = self.steps.max(1);
        for (name, p) in store.iter_mut() {
            let n = p.values.len();
            let slot = self.state.entry(name.clone()).or_insert_with(|| Slot {
                a: vec![T::zero(); n],
                b: vec![T::zero(); n],
            });
            match self.kind {
                OptimizerKind::Sgd => sgd_step(
                    p.values.data_mut(),
                    &p.grad,
                    &mut slot.a,
                    &p.trainable,
                    lr,
                    T::of(self.momentum),
                ),
                OptimizerKind::Adam => adam_step(
                    p.values.data_mut(),
                    &p.grad,
                    &mut slot.a,
                    &mut slot.b,
                    &p.trainable,
                    lr,
                    (T::of(self.betas.0), T::of(self.betas.1)),
                    step,
                ),
            }
        }
    }
}
