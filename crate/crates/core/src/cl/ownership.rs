//! Per-scalar ownership of shared kernels, pick masks and the sparsity schedule.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSpec;

/// Owner id of a scalar no task has claimed yet.
pub const FREE: u8 = 0;

/// Owner of every scalar of every shared kernel, keyed by kernel name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnershipMap {
    layers: BTreeMap<String, Vec<u8>>,
}

/// Owned/free counts of one kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerOccupancy {
    pub layer: String,
    pub total: usize,
    pub free: usize,
    /// Scalars per owning task id.
    pub owned: BTreeMap<u8, usize>,
}

impl OwnershipMap {
    pub fn new<'a>(specs: impl IntoIterator<Item = &'a ParamSpec>) -> Self {
        OwnershipMap {
            layers: specs
                .into_iter()
                .filter(|s| s.is_shared())
                .map(|s| (s.name.clone(), vec![FREE; s.numel()]))
                .collect(),
        }
    }

    pub fn from_layers(layers: BTreeMap<String, Vec<u8>>) -> Self {
        OwnershipMap { layers }
    }

    pub fn owners(&self, layer: &str) -> Result<&[u8]> {
        self.layers
            .get(layer)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("no ownership entry for `{layer}`")))
    }

    pub fn owners_mut(&mut self, layer: &str) -> Result<&mut [u8]> {
        self.layers
            .get_mut(layer)
            .map(Vec::as_mut_slice)
            .ok_or_else(|| Error::Lookup(format!("no ownership entry for `{layer}`")))
    }

    pub fn layers(&self) -> impl Iterator<Item = (&String, &Vec<u8>)> {
        self.layers.iter()
    }

    pub fn total(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }

    /// Scalars owned by `owner` (use [`FREE`] for unclaimed ones).
    pub fn count(&self, owner: u8) -> usize {
        self.layers
            .values()
            .map(|v| v.iter().filter(|&&o| o == owner).count())
            .sum()
    }

    /// Scalars per owner id, FREE included.
    pub fn histogram(&self) -> BTreeMap<u8, usize> {
        let mut h = BTreeMap::new();
        for &o in self.layers.values().flatten() {
            *h.entry(o).or_insert(0) += 1;
        }
        h
    }

    pub fn occupancy(&self) -> Vec<LayerOccupancy> {
        self.layers
            .iter()
            .map(|(name, v)| {
                let mut owned = BTreeMap::new();
                for &o in v.iter().filter(|&&o| o != FREE) {
                    *owned.entry(o).or_insert(0) += 1;
                }
                LayerOccupancy {
                    layer: name.clone(),
                    total: v.len(),
                    free: v.iter().filter(|&&o| o == FREE).count(),
                    owned,
                }
            })
            .collect()
    }

    /// Every scalar has exactly one owner and owner counts add up.
    pub fn check_partition(&self, tasks: u8) -> Result<()> {
        let h = self.histogram();
        if let Some((&o, _)) = h.iter().find(|(&o, _)| o > tasks) {
            return Err(Error::Contract(format!(
                "owner id {o} exceeds the {tasks} known tasks"
            )));
        }
        let sum: usize = h.values().sum();
        if sum != self.total() {
            return Err(Error::Contract(format!(
                "owner counts sum to {sum}, expected {}",
                self.total()
            )));
        }
        Ok(())
    }

    /// Text table: one row per layer, one column per task plus FREE.
    pub fn table(&self, tasks: u8) -> String {
        let mut s = String::new();
        let width = self.layers.keys().map(String::len).max().unwrap_or(5).max(5);
        let _ = write!(s, "{:width$} {:>9} {:>9}", "layer", "total", "free");
        for t in 1..=tasks {
            let _ = write!(s, " {:>9}", format!("task{t}"));
        }
        s.push('\n');
        for occ in self.occupancy() {
            let _ = write!(s, "{:width$} {:>9} {:>9}", occ.layer, occ.total, occ.free);
            for t in 1..=tasks {
                let _ = write!(s, " {:>9}", occ.owned.get(&t).copied().unwrap_or(0));
            }
            s.push('\n');
        }
        s
    }

    /// Capacity error naming `layer`, carrying the full table.
    pub fn capacity_error(&self, layer: &str, tasks: u8) -> Error {
        Error::Capacity {
            layer: layer.to_string(),
            occupancy: self.table(tasks),
        }
    }
}

/// Which earlier-task scalars a task reads, per shared kernel. Bits are only
/// ever set where the owner is an earlier task.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PickMask {
    bits: BTreeMap<String, Vec<bool>>,
}

impl PickMask {
    pub fn empty() -> Self {
        PickMask::default()
    }

    /// Selects every scalar owned by a task before `task` in `layers`.
    pub fn all<'a>(owners: &OwnershipMap, task: u8, layers: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut bits = BTreeMap::new();
        for l in layers {
            let o = owners.owners(l)?;
            bits.insert(l.to_string(), o.iter().map(|&o| o != FREE && o < task).collect());
        }
        Ok(PickMask { bits })
    }

    pub fn from_bits(bits: BTreeMap<String, Vec<bool>>) -> Self {
        PickMask { bits }
    }

    pub fn layer(&self, name: &str) -> Option<&[bool]> {
        self.bits.get(name).map(Vec::as_slice)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&String, &Vec<bool>)> {
        self.bits.iter()
    }

    pub fn get(&self, name: &str, i: usize) -> bool {
        self.bits.get(name).is_some_and(|b| b[i])
    }

    pub fn count(&self) -> usize {
        self.bits.values().flatten().filter(|&&b| b).count()
    }

    /// Every set bit points at a scalar owned by an earlier task.
    pub fn check_domain(&self, owners: &OwnershipMap, task: u8) -> Result<()> {
        for (name, bits) in &self.bits {
            let o = owners.owners(name)?;
            if let Some(i) = bits
                .iter()
                .zip(o)
                .position(|(&b, &o)| b && !(o != FREE && o < task))
            {
                return Err(Error::Contract(format!(
                    "pick mask of task {task} selects `{name}`[{i}] owned by {}",
                    o[i]
                )));
            }
        }
        Ok(())
    }
}

/// Fraction of a task's trainable pool released after training, per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparsitySchedule {
    pub fractions: Vec<f64>,
}

impl SparsitySchedule {
    /// Task `k` of `tasks` keeps `1/(tasks-k+1)` of its pool, so each later
    /// task gets a proportional share of what is left. The last task keeps
    /// everything.
    pub fn proportional(tasks: usize) -> Self {
        SparsitySchedule {
            fractions: (1..=tasks)
                .map(|k| 1.0 - 1.0 / (tasks - k + 1) as f64)
                .collect(),
        }
    }

    pub fn fraction(&self, task_index: usize) -> Result<f64> {
        self.fractions.get(task_index).copied().ok_or_else(|| {
            Error::config(format!(
                "sparsity schedule has {} entries, task {} needs one",
                self.fractions.len(),
                task_index + 1
            ))
        })
    }

    pub fn validate(&self, tasks: usize) -> Result<()> {
        if self.fractions.len() != tasks {
            return Err(Error::config(format!(
                "sparsity schedule lists {} fractions for {tasks} tasks",
                self.fractions.len()
            )));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
            return Err(Error::config(format!("prune fraction {f} outside [0, 1)")));
        }
        Ok(())
    }
}
