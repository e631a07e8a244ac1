//! QRS matching, segmentation decoding and ROC AUC.

use serde::{Deserialize, Serialize};

use crate::decoders::DECISION_THRESHOLD;

/// Resolution factor between the segmentation output and the input signal.
pub const SEG_STRIDE: usize = 4;
/// Default QRS matching tolerance in seconds.
pub const MATCH_TOLERANCE_S: f64 = 0.075;

pub fn tolerance_samples(fs: f64) -> usize {
    (MATCH_TOLERANCE_S * fs).round() as usize
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn sen(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn pp(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn f1(&self) -> f64 {
        let (s, p) = (self.sen(), self.pp());
        if s + p == 0.0 {
            0.0
        } else {
            2.0 * s * p / (s + p)
        }
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Greedy one-to-one matching: predictions are visited in increasing order
/// and each takes the nearest still-unmatched truth within `±tol`.
pub fn qrs_match(pred: &[usize], truth: &[usize], tol: usize) -> MatchCounts {
    let mut used = vec![false; truth.len()];
    let mut tp = 0;
    let mut start = 0;
    for &p in pred {
        while start < truth.len() && truth[start] + tol < p {
            start += 1;
        }
        let mut best: Option<(usize, usize)> = None;
        for (j, &t) in truth.iter().enumerate().skip(start) {
            if t > p + tol {
                break;
            }
            if used[j] {
                continue;
            }
            let d = t.abs_diff(p);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
    }
    MatchCounts {
        tp,
        fp: pred.len() - tp,
        fn_: truth.len() - tp,
    }
}

/// Thresholds per-position probabilities at 0.5 and returns the centroid of
/// each positive run, mapped back to input-sample indices.
pub fn seg_predictions(probs: &[f32]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    let thr = DECISION_THRESHOLD as f32;
    for i in 0..=probs.len() {
        let on = i < probs.len() && probs[i] > thr;
        match (on, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                let centre = (s + i - 1) as f64 / 2.0;
                out.push((centre * SEG_STRIDE as f64).round() as usize);
                run_start = None;
            }
            _ => {}
        }
    }
    out
}

/// Mann–Whitney AUC with average ranks for ties. `None` when the labels are
/// all one value.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Per-class AUC and their mean over classes that have both label values.
/// `scores[c]`/`labels[c]` hold class `c` across samples.
pub fn macro_auc(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> (Vec<Option<f64>>, Option<f64>) {
    let per: Vec<Option<f64>> = scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(c, (s, l))| {
            let a = auc(s, l);
            if a.is_none() {
                log::warn!("class {c} has a single label value; excluded from macro AUC");
            }
            a
        })
        .collect();
    let valid: Vec<f64> = per.iter().flatten().copied().collect();
    let mac = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    (per, mac)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sen: f64,
    pub pp: f64,
    pub f1: f64,
}

impl From<MatchCounts> for SegMetrics {
    fn from(c: MatchCounts) -> Self {
        SegMetrics {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            sen: c.sen(),
            pp: c.pp(),
            f1: c.f1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsMetrics {
    pub per_class_auc: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
}

/// Evaluation summary for one task. Serializes with a fixed key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub task_id: u8,
    pub mode: crate::network::TaskMode,
    pub samples: usize,
    pub segmentation: Option<SegMetrics>,
    pub classification: Option<ClsMetrics>,
    pub parameter_count: usize,
    /// Omitted in deterministic runs so reports stay byte-identical.
    pub runtime_seconds: Option<f64>,
}

impl MetricsReport {
    /// F1 for segmentation, macro AUC for classification.
    pub fn headline(&self) -> f64 {
        if let Some(s) = &self.segmentation {
            s.f1
        } else {
            self.classification
                .as_ref()
                .and_then(|c| c.macro_auc)
                .unwrap_or(0.0)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
