//! Turning windows into network inputs and targets.

use crate::encoder::branch_len;
use crate::error::{Error, Result};
use crate::network::{TaskMode, TaskShape};
use crate::tensor::Tensor;
use crate::train::metrics::SEG_STRIDE;

use serde::{Deserialize, Serialize};

use super::filter::{BAND_HI_HZ, BAND_LO_HZ};
use super::window::{window_and_normalize, EcgWindow, WINDOW_SECONDS};
use super::EcgRecord;

/// Half-width of the positive neighbourhood around an R-peak, seconds.
pub const SEG_LABEL_HALF_WIDTH_S: f64 = 0.075;

/// One training/evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(leads, L)`.
    pub signal: Tensor<f32>,
    /// `(1, ceil(L/4))` for segmentation, `(classes)` for classification.
    pub target: Tensor<f32>,
    pub fs: f64,
    pub qrs: Vec<usize>,
    pub labels: Vec<u32>,
    pub patient_id: String,
}

/// Record-to-window preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    /// Band-pass edges in Hz; `None` skips filtering.
    pub band_hz: Option<[f64; 2]>,
    pub window_seconds: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            band_hz: Some([BAND_LO_HZ, BAND_HI_HZ]),
            window_seconds: WINDOW_SECONDS,
        }
    }
}

/// Band-pass (optional), then cut and standardize windows.
pub fn preprocess(records: &[EcgRecord], p: &Preprocess) -> Result<Vec<EcgWindow>> {
    let mut out = Vec::new();
    for r in records {
        r.validate()?;
        let r = match p.band_hz {
            Some([lo, hi]) => r.bandpassed(lo, hi)?,
            None => r.clone(),
        };
        out.extend(window_and_normalize(&r, p.window_seconds));
    }
    Ok(out)
}

/// Position `p` of the quarter-resolution output is positive iff some R-peak
/// lies within `±floor(0.075·fs)` samples of `4p`.
pub fn seg_target(qrs: &[usize], len: usize, fs: f64) -> Vec<f32> {
    let out = branch_len(len, 0);
    let half = (SEG_LABEL_HALF_WIDTH_S * fs).floor() as usize;
    (0..out)
        .map(|p| {
            let c = p * SEG_STRIDE;
            if qrs.iter().any(|&q| q.abs_diff(c) <= half) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Multi-hot over the task's class list.
pub fn cls_target(labels: &[u32], classes: &[u32]) -> Vec<f32> {
    classes
        .iter()
        .map(|c| if labels.contains(c) { 1.0 } else { 0.0 })
        .collect()
}

/// Builds samples for a task. `classes` lists the class IDs of a
/// classification task in output order.
pub fn build_samples(windows: &[EcgWindow], shape: &TaskShape, classes: &[u32]) -> Result<Vec<Sample>> {
    windows
        .iter()
        .map(|w| {
            if w.signal.len() != shape.leads {
                return Err(Error::shape(format!(
                    "lead adapter `enc.adapter` takes {} leads, window has {}",
                    shape.leads,
                    w.signal.len()
                )));
            }
            if w.len() != shape.window_len {
                return Err(Error::shape(format!(
                    "task expects windows of {} samples, got {}",
                    shape.window_len,
                    w.len()
                )));
            }
            let data: Vec<f32> = w.signal.iter().flatten().copied().collect();
            let signal = Tensor::from_vec(&[shape.leads, shape.window_len], data)?;
            let target = match shape.mode {
                TaskMode::Seg => Tensor::from_vec(
                    &[1, branch_len(shape.window_len, 0)],
                    seg_target(&w.qrs, w.len(), w.fs),
                )?,
                TaskMode::Cls => {
                    if classes.len() != shape.classes {
                        return Err(Error::config(format!(
                            "task declares {} classes but lists {}",
                            shape.classes,
                            classes.len()
                        )));
                    }
                    Tensor::from_vec(&[classes.len()], cls_target(&w.labels, classes))?
                }
            };
            Ok(Sample {
                signal,
                target,
                fs: w.fs,
                qrs: w.qrs.clone(),
                labels: w.labels.clone(),
                patient_id: w.patient_id.clone(),
            })
        })
        .collect()
}
