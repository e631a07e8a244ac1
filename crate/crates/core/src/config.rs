//! Sequence configuration files (JSON, unknown keys rejected).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cl::{PickConfig, SparsitySchedule, TaskPlan};
use crate::data::{build_samples, load_csv, preprocess, split, synth_ecg, EcgRecord, Preprocess, SplitScheme, SynthConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::network::{TaskMode, TaskShape};
use crate::train::OptimConfig;

/// Where a task's records come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthConfig),
    /// A `.csv` file or a directory of them, relative to the config file.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub mode: TaskMode,
    pub leads: usize,
    /// Class IDs in output order; required and non-empty for classification.
    #[serde(default)]
    pub classes: Vec<u32>,
    pub data: DataSource,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default = "default_retrain_epochs")]
    pub retrain_epochs: usize,
}

fn default_retrain_epochs() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub seed: u64,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default)]
    pub split: SplitScheme,
    /// Keep every patient's windows in a single fold.
    #[serde(default = "yes")]
    pub split_by_patient: bool,
    #[serde(default)]
    pub pick: PickConfig,
    /// Per-task prune fractions; defaults to the proportional schedule.
    #[serde(default)]
    pub schedule: Option<SparsitySchedule>,
    pub tasks: Vec<TaskConfig>,
}

fn yes() -> bool {
    true
}

impl SequenceConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn schedule(&self) -> SparsitySchedule {
        self.schedule
            .clone()
            .unwrap_or_else(|| SparsitySchedule::proportional(self.tasks.len()))
    }

    /// Checks everything that does not need the data; `base` resolves CSV paths.
    pub fn validate(&self, base: &Path) -> Result<()> {
        self.encoder.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::config("a sequence needs at least one task"));
        }
        if self.tasks.len() > 255 {
            return Err(Error::config("at most 255 tasks are supported"));
        }
        self.schedule().validate(self.tasks.len())?;
        for t in &self.tasks {
            t.optim.validate()?;
            if t.leads == 0 {
                return Err(Error::config(format!("task `{}`: leads must be >= 1", t.name)));
            }
            match t.mode {
                TaskMode::Cls if t.classes.is_empty() => {
                    return Err(Error::config(format!(
                        "classification task `{}` lists no classes",
                        t.name
                    )))
                }
                TaskMode::Seg if !t.classes.is_empty() => {
                    return Err(Error::config(format!(
                        "segmentation task `{}` must not list classes",
                        t.name
                    )))
                }
                _ => {}
            }
            match &t.data {
                DataSource::Synth(s) => {
                    s.validate()?;
                    if s.leads != t.leads {
                        return Err(Error::config(format!(
                            "task `{}` declares {} leads but its generator makes {}",
                            t.name, t.leads, s.leads
                        )));
                    }
                }
                DataSource::Csv(p) => {
                    let p = base.join(p);
                    if !p.exists() {
                        return Err(Error::config(format!(
                            "task `{}`: data source {} does not exist",
                            t.name,
                            p.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Loads and splits every task's data.
    pub fn plans(&self, base: &Path) -> Result<Vec<TaskPlan>> {
        self.validate(base)?;
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, t)| self.plan(t, i, base))
            .collect()
    }

    fn plan(&self, t: &TaskConfig, index: usize, base: &Path) -> Result<TaskPlan> {
        let records = match &t.data {
            DataSource::Synth(s) => synth_ecg(s)?,
            DataSource::Csv(p) => load_csv(base.join(p))?,
        };
        let shape = task_shape(t, &records, &self.preprocess)?;
        let windows = preprocess(&records, &self.preprocess)?;
        let (train, val, test) = split(
            &windows,
            |w| w.patient_id.as_str(),
            self.split,
            self.split_by_patient,
            self.seed.wrapping_add(index as u64),
        )?;
        let build = |w: &[_]| build_samples(w, &shape, &t.classes);
        Ok(TaskPlan {
            name: t.name.clone(),
            shape,
            classes: t.classes.clone(),
            optim: t.optim.clone(),
            retrain_epochs: t.retrain_epochs,
            train: build(&train)?,
            val: build(&val)?,
            test: build(&test)?,
        })
    }
}

/// Geometry implied by a task's declaration and its records.
pub fn task_shape(t: &TaskConfig, records: &[EcgRecord], p: &Preprocess) -> Result<TaskShape> {
    let first = records
        .first()
        .ok_or_else(|| Error::config(format!("task `{}` has no records", t.name)))?;
    if let Some(r) = records.iter().find(|r| r.fs != first.fs) {
        return Err(Error::config(format!(
            "task `{}` mixes sampling rates {} and {}",
            t.name, first.fs, r.fs
        )));
    }
    if let Some(r) = records.iter().find(|r| r.leads() != t.leads) {
        return Err(Error::shape(format!(
            "lead adapter `enc.adapter` of task `{}` takes {} leads, record of patient `{}` has {}",
            t.name,
            t.leads,
            r.patient_id,
            r.leads()
        )));
    }
    let window_len = (p.window_seconds * first.fs).round() as usize;
    Ok(match t.mode {
        TaskMode::Seg => TaskShape::seg(t.leads, window_len),
        TaskMode::Cls => TaskShape::cls(t.leads, t.classes.len(), window_len),
    })
}
