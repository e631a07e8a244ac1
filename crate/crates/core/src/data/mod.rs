//! ECG records, synthetic generation and preprocessing.

pub mod csv_io;
pub mod dataset;
pub mod filter;
pub mod split;
pub mod synth;
pub mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, save_csv};
pub use dataset::{build_samples, preprocess, seg_target, Preprocess, Sample};
pub use filter::bandpass;
pub use split::{split, SplitScheme};
pub use synth::{synth_ecg, Finding, Morphology, Rhythm, SynthConfig};
pub use window::{window_and_normalize, EcgWindow, WINDOW_SECONDS};

/// A multi-lead recording with optional beat and label annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    /// `signal[lead][sample]`, millivolts.
    pub signal: Vec<Vec<f32>>,
    pub fs: f64,
    /// Sorted R-peak sample indices.
    pub qrs: Option<Vec<usize>>,
    /// Class IDs (see [`Finding`]).
    pub labels: Option<Vec<u32>>,
    pub patient_id: String,
}

impl EcgRecord {
    pub fn leads(&self) -> usize {
        self.signal.len()
    }

    pub fn samples(&self) -> usize {
        self.signal.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fs.is_finite() || self.fs <= 0.0 {
            return Err(Error::config(format!("sampling rate must be > 0, got {}", self.fs)));
        }
        let n = self.samples();
        if self.signal.iter().any(|l| l.len() != n) {
            return Err(Error::shape("leads have different lengths"));
        }
        if let Some(q) = &self.qrs {
            if q.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("QRS locations must be strictly increasing"));
            }
            if q.last().is_some_and(|&v| v >= n) {
                return Err(Error::config("QRS location beyond end of signal"));
            }
        }
        Ok(())
    }

    /// Zero-phase band-pass of every lead.
    pub fn bandpassed(&self, lo: f64, hi: f64) -> Result<EcgRecord> {
        let signal = self
            .signal
            .iter()
            .map(|l| bandpass(l, self.fs, lo, hi))
            .collect::<Result<_>>()?;
        Ok(EcgRecord {
            signal,
            ..self.clone()
        })
    }
}
