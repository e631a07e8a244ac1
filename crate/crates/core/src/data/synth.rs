//! Gaussian-wave ECG synthesis with annotations that are exact by construction.
//!
//! Each beat is a sum of Gaussian bumps (P, Q, R, S, T) placed relative to an
//! integer R-peak sample. The rhythm decides the RR-interval process and the
//! morphology decides QRS width and ST level. Annotated R-peaks are exactly
//! the placement indices.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::filter::{butterworth, lfilter, Kind};
use super::EcgRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rhythm {
    Regular,
    AfLike,
    Bigeminy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    Normal,
    WideQrs,
    StShift,
}

/// Class vocabulary for record labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u32)]
pub enum Finding {
    SinusRhythm = 0,
    AfLike = 1,
    Bigeminy = 2,
    WideQrs = 3,
    StShift = 4,
    Tachycardia = 5,
    Bradycardia = 6,
}

impl Finding {
    pub const ALL: [Finding; 7] = [
        Finding::SinusRhythm,
        Finding::AfLike,
        Finding::Bigeminy,
        Finding::WideQrs,
        Finding::StShift,
        Finding::Tachycardia,
        Finding::Bradycardia,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub fs: f64,
    pub duration_s: f64,
    pub leads: usize,
    /// Heart-rate range, drawn uniformly per record.
    pub hr_bpm: [f64; 2],
    /// Rhythm pool; each record draws one uniformly.
    #[serde(default = "default_rhythms")]
    pub rhythms: Vec<Rhythm>,
    /// Abnormal morphologies; each is applied to a record independently
    /// with probability `morphology_prob`. Empty means always normal.
    #[serde(default)]
    pub morphologies: Vec<Morphology>,
    #[serde(default = "default_prob")]
    pub morphology_prob: f64,
    /// `None` for a noiseless signal.
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub records: usize,
    #[serde(default = "default_patients")]
    pub patients: usize,
    pub seed: u64,
}

fn default_rhythms() -> Vec<Rhythm> {
    vec![Rhythm::Regular]
}

fn default_prob() -> f64 {
    0.5
}

fn default_patients() -> usize {
    10
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fs: 500.0,
            duration_s: 10.0,
            leads: 1,
            hr_bpm: [50.0, 110.0],
            rhythms: default_rhythms(),
            morphologies: vec![],
            morphology_prob: 0.5,
            snr_db: None,
            records: 10,
            patients: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn samples(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fs.is_finite() || self.fs <= 0.0 || self.samples() < 32 {
            return Err(Error::config("need fs > 0 and duration·fs >= 32 samples"));
        }
        if self.leads == 0 {
            return Err(Error::config("lead count must be >= 1"));
        }
        let [lo, hi] = self.hr_bpm;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("invalid heart-rate range {lo}..{hi}")));
        }
        if self.rhythms.is_empty() {
            return Err(Error::config("rhythm pool is empty"));
        }
        if self.morphologies.contains(&Morphology::Normal) && self.morphologies.len() > 1 {
            return Err(Error::config(
                "morphology `normal` cannot be combined with abnormal morphologies",
            ));
        }
        if !(0.0..=1.0).contains(&self.morphology_prob) {
            return Err(Error::config("morphology_prob must be in [0, 1]"));
        }
        if self.patients == 0 {
            return Err(Error::config("patient count must be >= 1"));
        }
        Ok(())
    }
}

/// One Gaussian component: offset from R (s), amplitude (mV), width σ (s).
#[derive(Debug, Clone, Copy)]
struct Wave {
    offset: f64,
    amp: f64,
    sigma: f64,
}

#[derive(Debug, Clone, Copy)]
struct BeatShape {
    p: Option<Wave>,
    q: Wave,
    r: Wave,
    s: Wave,
    st: Option<Wave>,
    t: Wave,
}

fn beat_shape(rr: f64, p_wave: bool, wide: bool, st: bool) -> BeatShape {
    let (w, off) = if wide { (2.5, 2.2) } else { (1.0, 1.0) };
    BeatShape {
        p: p_wave.then_some(Wave {
            offset: -0.16,
            amp: 0.12,
            sigma: 0.02,
        }),
        q: Wave {
            offset: -0.03 * off,
            amp: -0.12,
            sigma: 0.008 * w,
        },
        r: Wave {
            offset: 0.0,
            amp: 1.1,
            sigma: 0.01 * w,
        },
        s: Wave {
            offset: 0.03 * off,
            amp: -0.25,
            sigma: 0.01 * w,
        },
        st: st.then_some(Wave {
            offset: 0.12,
            amp: -0.18,
            sigma: 0.05,
        }),
        t: Wave {
            offset: (0.28 * rr.sqrt()).clamp(0.18, 0.4),
            amp: 0.3,
            sigma: 0.045,
        },
    }
}

fn lead_gain(lead: usize) -> f64 {
    0.6 + 0.5 * ((lead * 37 % 11) as f64 / 10.0)
}

/// Per-record random stream derived from the dataset seed.
fn record_rng(seed: u64, idx: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(idx as u64 + 1);
    r
}

/// Everything about a record decided before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatPlan {
    pub hr_bpm: f64,
    pub rhythm: Rhythm,
    pub morphology: BTreeSet<Morphology>,
    /// R-peak positions in samples; may start before 0 and end after the record.
    pub r_peaks: Vec<i64>,
}

impl BeatPlan {
    pub fn findings(&self) -> Vec<u32> {
        let mut f = BTreeSet::new();
        match self.rhythm {
            Rhythm::Regular => f.insert(Finding::SinusRhythm),
            Rhythm::AfLike => f.insert(Finding::AfLike),
            Rhythm::Bigeminy => f.insert(Finding::Bigeminy),
        };
        if self.morphology.contains(&Morphology::WideQrs) {
            f.insert(Finding::WideQrs);
        }
        if self.morphology.contains(&Morphology::StShift) {
            f.insert(Finding::StShift);
        }
        if self.hr_bpm > 100.0 {
            f.insert(Finding::Tachycardia);
        }
        if self.hr_bpm < 60.0 {
            f.insert(Finding::Bradycardia);
        }
        f.into_iter().map(Finding::id).collect()
    }
}

fn plan_beats(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> BeatPlan {
    let [lo, hi] = cfg.hr_bpm;
    let hr = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let rhythm = cfg.rhythms[rng.random_range(0..cfg.rhythms.len())];
    let morphology: BTreeSet<Morphology> = cfg
        .morphologies
        .iter()
        .copied()
        .filter(|m| *m != Morphology::Normal)
        .filter(|_| rng.random_bool(cfg.morphology_prob))
        .collect();
    let rr = 60.0 / hr * cfg.fs;
    let n = cfg.samples() as i64;
    let jitter = LogNormal::new(0.0, 0.18).expect("valid");
    let mut t = rng.random_range(0.0..rr) - rr;
    let mut peaks = Vec::new();
    let mut k = 0usize;
    let min_rr = 0.3 * cfg.fs;
    while (t as i64) < n + rr as i64 {
        peaks.push(t.round() as i64);
        let next = match rhythm {
            Rhythm::Regular => rr,
            Rhythm::AfLike => rr * jitter.sample(rng),
            Rhythm::Bigeminy => {
                if k.is_multiple_of(2) {
                    0.7 * rr
                } else {
                    1.3 * rr
                }
            }
        };
        t += next.max(min_rr);
        k += 1;
    }
    BeatPlan {
        hr_bpm: hr,
        rhythm,
        morphology,
        r_peaks: peaks,
    }
}

fn render(cfg: &SynthConfig, plan: &BeatPlan, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = cfg.samples();
    let fs = cfg.fs;
    let rr_mean = 60.0 / plan.hr_bpm;
    let wide = plan.morphology.contains(&Morphology::WideQrs);
    let st = plan.morphology.contains(&Morphology::StShift);
    let amp_jitter = Normal::new(1.0, 0.04).expect("valid");
    let mut base = vec![0.0f64; n];
    for &r in &plan.r_peaks {
        let shape = beat_shape(rr_mean, plan.rhythm != Rhythm::AfLike, wide, st);
        let a: f64 = Distribution::<f64>::sample(&amp_jitter, rng).clamp(0.85, 1.15);
        let waves = [Some(shape.q), Some(shape.r), Some(shape.s), shape.p, shape.st, Some(shape.t)];
        for w in waves.into_iter().flatten() {
            let centre = r as f64 + w.offset * fs;
            let sig = w.sigma * fs;
            let lo = (centre - 5.0 * sig).floor().max(0.0) as usize;
            let hi = ((centre + 5.0 * sig).ceil() as i64).clamp(0, n as i64) as usize;
            for (i, v) in base.iter_mut().enumerate().take(hi).skip(lo) {
                let d = (i as f64 - centre) / sig;
                *v += a * w.amp * (-0.5 * d * d).exp();
            }
        }
    }
    (0..cfg.leads)
        .map(|l| base.iter().map(|v| v * lead_gain(l)).collect())
        .collect()
}

fn add_noise(cfg: &SynthConfig, leads: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    let Some(snr) = cfg.snr_db else { return };
    let white = Normal::new(0.0, 1.0).expect("valid");
    let cutoff = (0.4 * cfg.fs).min(40.0);
    let lp = butterworth(2, cutoff, cfg.fs, Kind::LowPass).expect("valid cutoff");
    for lead in leads.iter_mut() {
        let p_sig = lead.iter().map(|v| v * v).sum::<f64>() / lead.len() as f64;
        let raw: Vec<f64> = (0..lead.len()).map(|_| white.sample(rng)).collect();
        let noise = lfilter(&lp, &raw);
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        let scale = if p_noise > 0.0 {
            (p_sig / 10f64.powf(snr / 10.0) / p_noise).sqrt()
        } else {
            0.0
        };
        for (v, e) in lead.iter_mut().zip(noise) {
            *v += scale * e;
        }
    }
}

/// Renders record `idx` of the dataset described by `cfg`, returning the
/// record together with its noiseless waveform.
pub fn synth_one(cfg: &SynthConfig, idx: usize) -> Result<(EcgRecord, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let mut rng = record_rng(cfg.seed, idx);
    let plan = plan_beats(cfg, &mut rng);
    let clean = render(cfg, &plan, &mut rng);
    let mut noisy = clean.clone();
    add_noise(cfg, &mut noisy, &mut rng);
    let n = cfg.samples() as i64;
    let qrs: Vec<usize> = plan
        .r_peaks
        .iter()
        .filter(|&&r| (0..n).contains(&r))
        .map(|&r| r as usize)
        .collect();
    let rec = EcgRecord {
        signal: noisy
            .iter()
            .map(|l| l.iter().map(|&v| v as f32).collect())
            .collect(),
        fs: cfg.fs,
        qrs: Some(qrs),
        labels: Some(plan.findings()),
        patient_id: format!("p{:03}", idx % cfg.patients),
    };
    Ok((rec, clean))
}

/// Generates `cfg.records` records; record `i` depends only on `(seed, i)`.
pub fn synth_ecg(cfg: &SynthConfig) -> Result<Vec<EcgRecord>> {
    cfg.validate()?;
    (0..cfg.records).map(|i| synth_one(cfg, i).map(|r| r.0)).collect()
}
