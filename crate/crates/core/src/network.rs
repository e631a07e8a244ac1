//! Encoder plus both decoders, addressed per task.

use serde::{Deserialize, Serialize};

use crate::autograd::{Mode, NormStats, Var};
use crate::decoders::{ClsDecoder, SegDecoder};
use crate::encoder::{branch_len, EncoderConfig, MrEncoder};
use crate::error::{Error, Result};
use crate::nn::{Forward, StatsTable, Weights};
use crate::params::{Family, ParamSpec};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Seg,
    Cls,
}

impl TaskMode {
    pub fn family(self) -> Family {
        match self {
            TaskMode::Seg => Family::Seg,
            TaskMode::Cls => Family::Cls,
        }
    }
}

/// Input/output geometry of one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShape {
    pub mode: TaskMode,
    pub leads: usize,
    /// Number of output labels (1 for segmentation).
    pub classes: usize,
    /// Window length in samples.
    pub window_len: usize,
}

impl TaskShape {
    pub fn seg(leads: usize, window_len: usize) -> Self {
        TaskShape {
            mode: TaskMode::Seg,
            leads,
            classes: 1,
            window_len,
        }
    }

    pub fn cls(leads: usize, classes: usize, window_len: usize) -> Self {
        TaskShape {
            mode: TaskMode::Cls,
            leads,
            classes,
            window_len,
        }
    }

    /// Shape of one target: `(1, ceil(L/4))` for segmentation, `(classes)` otherwise.
    pub fn target_shape(&self) -> Vec<usize> {
        match self.mode {
            TaskMode::Seg => vec![1, branch_len(self.window_len, 0)],
            TaskMode::Cls => vec![self.classes],
        }
    }

    /// Families whose shared kernels this task reads.
    pub fn families(&self) -> [Family; 2] {
        [Family::Encoder, self.mode.family()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: MrEncoder,
    pub seg: SegDecoder,
    pub cls: ClsDecoder,
}

impl Network {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        Ok(Network {
            encoder: MrEncoder::new(config)?,
            seg: SegDecoder::new(config),
            cls: ClsDecoder::new(config),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    /// Every parameter read by a task of this shape.
    pub fn specs(&self, task: &TaskShape) -> Vec<ParamSpec> {
        let mut v = self.encoder.specs(task.leads);
        match task.mode {
            TaskMode::Seg => v.extend(self.seg.specs()),
            TaskMode::Cls => v.extend(self.cls.specs(task.classes)),
        }
        v
    }

    /// Shared kernels of all three families (head/adapter shapes do not matter).
    pub fn shared_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.encoder.specs(1);
        v.extend(self.seg.specs());
        v.extend(self.cls.specs(1));
        v.retain(ParamSpec::is_shared);
        v
    }

    pub fn exclusive_specs(&self, task: &TaskShape) -> Vec<ParamSpec> {
        let mut v = self.specs(task);
        v.retain(|s| !s.is_shared());
        v
    }

    pub fn norm_layers(&self, task: &TaskShape) -> Vec<(String, usize)> {
        let mut v = self.encoder.norm_layers();
        if task.mode == TaskMode::Cls {
            v.extend(self.cls.norm_layers());
        }
        v
    }

    pub fn init_stats<T: Real>(&self, task: &TaskShape) -> StatsTable<T> {
        self.norm_layers(task)
            .into_iter()
            .map(|(n, c)| (n, NormStats::identity(c)))
            .collect()
    }

    /// Probabilities: `(B, 1, ceil(L/4))` for segmentation, `(B, classes)` for classification.
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var, task: &TaskShape) -> Result<Var> {
        let branches = self.encoder.forward(f, x)?;
        match task.mode {
            TaskMode::Seg => self.seg.forward(f, &branches),
            TaskMode::Cls => self.cls.forward(f, &branches, task.classes),
        }
    }

    /// Eval-mode inference on a batch `(B, leads, L)`.
    pub fn predict<T: Real>(
        &self,
        weights: &dyn Weights<T>,
        stats: &StatsTable<T>,
        batch: Tensor<T>,
        task: &TaskShape,
    ) -> Result<Tensor<T>> {
        let (_, leads, _) = batch.dims3()?;
        if leads != task.leads {
            return Err(Error::shape(format!(
                "lead adapter `enc.adapter` of this task takes {} leads, data has {leads}",
                task.leads
            )));
        }
        let mut stats = stats.clone();
        let mut f = Forward::new(weights, &mut stats, Mode::Eval);
        let x = f.graph.input(batch);
        let y = self.forward(&mut f, x, task)?;
        Ok(f.graph.value(y).clone())
    }
}
