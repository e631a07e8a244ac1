use super::EcgRecord;

pub const WINDOW_SECONDS: f64 = 10.0;

/// A fixed-length, per-lead standardized slice of a record.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgWindow {
    /// `signal[lead][sample]`.
    pub signal: Vec<Vec<f32>>,
    pub fs: f64,
    /// R-peaks re-indexed to the window start.
    pub qrs: Vec<usize>,
    pub labels: Vec<u32>,
    pub patient_id: String,
}

impl EcgWindow {
    pub fn len(&self) -> usize {
        self.signal.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Zero mean, unit (population) variance; a constant lead becomes all zeros.
pub fn standardize(x: &[f32]) -> Vec<f32> {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-12 {
        return vec![0.0; x.len()];
    }
    let sd = var.sqrt();
    x.iter().map(|&v| ((v as f64 - mean) / sd) as f32).collect()
}

/// Cuts non-overlapping windows of `seconds` (the tail is dropped) and
/// standardizes every lead of every window.
pub fn window_and_normalize(record: &EcgRecord, seconds: f64) -> Vec<EcgWindow> {
    let len = (seconds * record.fs).round() as usize;
    if len == 0 {
        return vec![];
    }
    let count = record.samples() / len;
    let qrs = record.qrs.clone().unwrap_or_default();
    (0..count)
        .map(|w| {
            let (s, e) = (w * len, (w + 1) * len);
            EcgWindow {
                signal: record.signal.iter().map(|l| standardize(&l[s..e])).collect(),
                fs: record.fs,
                qrs: qrs
                    .iter()
                    .filter(|&&q| (s..e).contains(&q))
                    .map(|&q| q - s)
                    .collect(),
                labels: record.labels.clone().unwrap_or_default(),
                patient_id: record.patient_id.clone(),
            }
        })
        .collect()
}
