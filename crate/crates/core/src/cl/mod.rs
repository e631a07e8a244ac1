//! Parameter-isolation continual learning.
//!
//! Every scalar of a shared kernel has one owner: FREE or the task that
//! claimed it. A task trains the FREE scalars of the kernels it reads while
//! reading (never writing) the earlier-task scalars its pick mask selects,
//! then releases its smallest weights back to FREE and fine-tunes the rest.
//! Biases, normalization parameters and statistics, the lead adapter and
//! class heads are private per task, so a finished task's function is fixed
//! bit for bit.

pub mod baselines;
pub mod engine;
pub mod ownership;

pub use baselines::{finetune, run_baseline, scratch, Baseline, BaselineOutcome};
pub use engine::{
    run_sequence, ClModel, PhaseLog, PickConfig, PickMode, PruneReport, Regime, SequenceOutcome, Stage,
    TaskPlan, TaskRecord, TaskView,
};
pub use ownership::{LayerOccupancy, OwnershipMap, PickMask, SparsitySchedule, FREE};
