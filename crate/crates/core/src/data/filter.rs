//! Butterworth IIR design (bilinear transform, second-order sections) and
//! zero-phase forward-backward filtering.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const BAND_LO_HZ: f64 = 0.5;
pub const BAND_HI_HZ: f64 = 45.0;
pub const HIGHPASS_ORDER: usize = 4;
/// The low-pass edge sits close to the QRS band; forward-backward filtering
/// squares the response, so a steeper section is needed to keep the
/// passband below 40 Hz flat to within 1 dB.
pub const LOWPASS_ORDER: usize = 10;

/// One biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II state for a unit step at steady state.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b[0], self.b[2] - self.a[1] * g]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    LowPass,
    HighPass,
}

/// Digital Butterworth of `order` with cutoff `fc` Hz at sampling rate `fs`.
pub fn butterworth(order: usize, fc: f64, fs: f64, kind: Kind) -> Result<Vec<Biquad>> {
    if order == 0 || !fc.is_finite() || fc <= 0.0 || fc >= fs / 2.0 {
        return Err(Error::config(format!(
            "butterworth: need order >= 1 and 0 < fc < fs/2 (order {order}, fc {fc}, fs {fs})"
        )));
    }
    let k = 2.0 * fs;
    let wc = k * (PI * fc / fs).tan();
    let mut sections = Vec::new();
    for i in 0..order / 2 {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let re = wc * theta.cos(); // negative
        // analog denominator s^2 - 2 re s + wc^2
        let (a2, a1, a0) = (1.0, -2.0 * re, wc * wc);
        let (b2, b1, b0) = match kind {
            Kind::LowPass => (0.0, 0.0, wc * wc),
            Kind::HighPass => (1.0, 0.0, 0.0),
        };
        sections.push(bilinear2([b2, b1, b0], [a2, a1, a0], k));
    }
    if order % 2 == 1 {
        let (b1, b0) = match kind {
            Kind::LowPass => (0.0, wc),
            Kind::HighPass => (1.0, 0.0),
        };
        let (a1, a0) = (1.0, wc);
        let n = a1 * k + a0;
        sections.push(Biquad {
            b: [(b1 * k + b0) / n, (b0 - b1 * k) / n, 0.0],
            a: [(a0 - a1 * k) / n, 0.0],
        });
    }
    Ok(sections)
}

fn bilinear2(b: [f64; 3], a: [f64; 3], k: f64) -> Biquad {
    let k2 = k * k;
    let num = |c: [f64; 3]| {
        [
            c[0] * k2 + c[1] * k + c[2],
            2.0 * c[2] - 2.0 * c[0] * k2,
            c[0] * k2 - c[1] * k + c[2],
        ]
    };
    let bn = num(b);
    let an = num(a);
    Biquad {
        b: [bn[0] / an[0], bn[1] / an[0], bn[2] / an[0]],
        a: [an[1] / an[0], an[2] / an[0]],
    }
}

/// Causal filtering through every section; `state` is updated in place.
fn run(sections: &[Biquad], x: &mut [f64], state: &mut [[f64; 2]]) {
    for (s, z) in sections.iter().zip(state.iter_mut()) {
        for v in x.iter_mut() {
            let y = s.b[0] * *v + z[0];
            z[0] = s.b[1] * *v - s.a[0] * y + z[1];
            z[1] = s.b[2] * *v - s.a[1] * y;
            *v = y;
        }
    }
}

/// Single forward pass from rest.
pub fn lfilter(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut st = vec![[0.0; 2]; sections.len()];
    run(sections, &mut y, &mut st);
    y
}

/// Initial state that makes a constant input of 1 a steady state.
fn step_states(sections: &[Biquad]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sections
        .iter()
        .map(|s| {
            let z = s.step_state();
            let out = [z[0] * scale, z[1] * scale];
            scale *= s.dc_gain();
            out
        })
        .collect()
}

/// Zero-phase filtering: odd-reflection padding, forward pass, backward pass,
/// each pass started from the steady state of its first sample.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    let zi = step_states(sections);

    let mut st: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * ext[0], z[1] * ext[0]]).collect();
    run(sections, &mut ext, &mut st);
    ext.reverse();
    let mut st: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * ext[0], z[1] * ext[0]]).collect();
    run(sections, &mut ext, &mut st);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// The band-pass filter designed for `fs` between `lo` and `hi` Hz.
pub fn bandpass_design(fs: f64, lo: f64, hi: f64) -> Result<Vec<Biquad>> {
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::config(format!("band-pass edges must satisfy 0 < lo < hi, got {lo}..{hi}")));
    }
    if hi >= fs / 2.0 {
        return Err(Error::config(format!(
            "sampling rate {fs} Hz too low for a {hi} Hz upper band edge"
        )));
    }
    let mut s = butterworth(HIGHPASS_ORDER, lo, fs, Kind::HighPass)?;
    s.extend(butterworth(LOWPASS_ORDER, hi, fs, Kind::LowPass)?);
    Ok(s)
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass(signal: &[f32], fs: f64, lo: f64, hi: f64) -> Result<Vec<f32>> {
    let design = bandpass_design(fs, lo, hi)?;
    let x: Vec<f64> = signal.iter().map(|&v| v as f64).collect();
    Ok(filtfilt(&design, &x).into_iter().map(|v| v as f32).collect())
}
