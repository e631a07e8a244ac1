//! Optimization and evaluation.

pub mod metrics;
pub mod optim;
pub mod schedule;

pub use metrics::{macro_auc, qrs_match, seg_predictions, MatchCounts, MetricsReport};
pub use optim::{adam_step, sgd_step, OptimConfig, Optimizer, OptimizerKind};
pub use schedule::lr_at;
