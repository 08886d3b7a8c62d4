//! PPG preprocessing: zero-phase Butterworth band-pass, z-scoring,
//! finite-difference derivatives and peak-interpolated upper envelopes.
//!
//! [`build_streams`] turns one raw channel into the six model inputs
//! `[x, x′, x″, env(x), env(x′), env(x″)]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

// Supplies float math when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// Minimum spacing between detected beats, seconds (200 bpm ceiling).
pub const MIN_PEAK_DISTANCE_S: f64 = 0.3;

/// Standard deviations below this are treated as a constant signal.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Order of each of the high-pass and low-pass Butterworth cascades. Must be even.
    pub order: usize,
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_hz: 0.5,
            high_hz: 8.0,
            order: 4,
            zero_phase: true,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if !(fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if self.high_hz >= fs / 2.0 {
            return Err(Error::Nyquist {
                high_hz: self.high_hz,
                nyquist: fs / 2.0,
            });
        }
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            return Err(Error::invalid(format!(
                "band edges must satisfy 0 < low < high, got {}..{}",
                self.low_hz, self.high_hz
            )));
        }
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(Error::invalid(format!("filter order must be even and positive, got {}", self.order)));
        }
        Ok(())
    }

    fn pad_len(&self) -> usize {
        3 * self.order
    }
}

/// Second-order section in transposed direct form II, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

#[derive(Clone, Copy)]
enum Pass {
    Low,
    High,
}

impl Biquad {
    /// Bilinear-transform section with cutoff prewarped to `f0`.
    fn design(pass: Pass, f0: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (sin, cos) = (w0.sin(), w0.cos());
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match pass {
            Pass::Low => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
            Pass::High => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
        };
        Self {
            b: b.map(|v| v / a0),
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes a constant unit input produce its steady-state output.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Butterworth cascade: `order` high-pass poles at `low_hz`, `order` low-pass poles at `high_hz`.
fn design_sections(spec: &FilterSpec, fs: f64) -> Vec<Biquad> {
    let pairs = spec.order / 2;
    let q = |k: usize| 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * spec.order) as f64).cos());
    let mut sections = Vec::with_capacity(2 * pairs);
    sections.extend((0..pairs).map(|k| Biquad::design(Pass::High, spec.low_hz, fs, q(k))));
    sections.extend((0..pairs).map(|k| Biquad::design(Pass::Low, spec.high_hz, fs, q(k))));
    sections
}

fn run_cascade(sections: &[Biquad], x: &mut [f64]) {
    let x0 = x[0];
    let mut scale = 1.0;
    for s in sections {
        let zi = s.step_state().map(|v| v * scale * x0);
        s.run(x, zi);
        scale *= s.dc_gain();
    }
}

/// Band-pass filter.
///
/// Zero-phase mode runs the cascade forward and backward over an odd
/// reflection of `3·order` samples at each end, starting every section in
/// its steady state, then trims the padding.
pub fn bandpass(signal: &[f64], fs: f64, spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate(fs)?;
    let n = signal.len();
    let pad = spec.pad_len();
    if n <= pad {
        return Err(Error::TooShort(format!(
            "band-pass needs more than {pad} samples, got {n}"
        )));
    }
    let sections = design_sections(spec, fs);
    if !spec.zero_phase {
        let mut out = signal.to_vec();
        run_cascade(&sections, &mut out);
        return Ok(out);
    }

    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    run_cascade(&sections, &mut ext);
    ext.reverse();
    run_cascade(&sections, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Z-score with population standard deviation; constant input maps to zeros.
pub fn zscore(signal: &[f64]) -> Vec<f64> {
    let n = signal.len() as f64;
    if signal.is_empty() {
        return Vec::new();
    }
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return vec![0.0; signal.len()];
    }
    signal.iter().map(|v| (v - mean) / std).collect()
}

/// First and second derivatives in units per second (per second²).
///
/// Interior points use central differences; endpoints reuse the nearest
/// one-sided stencil.
pub fn derivatives(signal: &[f64], fs: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if n < 3 {
        return Err(Error::TooShort(format!("derivatives need at least 3 samples, got {n}")));
    }
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        d1[i] = (signal[i + 1] - signal[i - 1]) * fs / 2.0;
        d2[i] = (signal[i + 1] - 2.0 * signal[i] + signal[i - 1]) * fs * fs;
    }
    d1[0] = (signal[1] - signal[0]) * fs;
    d1[n - 1] = (signal[n - 1] - signal[n - 2]) * fs;
    d2[0] = d2[1];
    d2[n - 1] = d2[n - 2];
    Ok((d1, d2))
}

/// Local maxima at least `min_distance` samples apart.
///
/// Candidates are samples strictly above the left neighbour and not below
/// the right one. Taller peaks suppress shorter ones within the distance;
/// equal heights keep the earlier index. Result is sorted by index.
pub fn find_peaks(signal: &[f64], min_distance: usize) -> Vec<usize> {
    let n = signal.len();
    if n < 3 {
        return Vec::new();
    }
    let mut candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| signal[i] > signal[i - 1] && signal[i] >= signal[i + 1])
        .collect();
    if min_distance <= 1 {
        return candidates;
    }
    let mut by_height = candidates.clone();
    by_height.sort_by(|&a, &b| signal[b].total_cmp(&signal[a]).then(a.cmp(&b)));
    let mut keep = vec![false; n];
    let mut blocked = vec![false; n];
    for &p in &by_height {
        if blocked[p] {
            continue;
        }
        keep[p] = true;
        let lo = p.saturating_sub(min_distance - 1);
        let hi = (p + min_distance).min(n);
        blocked[lo..hi].iter_mut().for_each(|b| *b = true);
    }
    candidates.retain(|&i| keep[i]);
    candidates
}

/// Upper envelope by linear interpolation through detected peaks.
///
/// Flat before the first and after the last peak. With fewer than two
/// peaks the envelope is the global maximum everywhere.
pub fn upper_envelope(signal: &[f64], fs: f64) -> Result<Vec<f64>> {
    let n = signal.len();
    if n < 3 {
        return Err(Error::TooShort(format!("envelope needs at least 3 samples, got {n}")));
    }
    let distance = (MIN_PEAK_DISTANCE_S * fs).ceil().max(1.0) as usize;
    let peaks = find_peaks(signal, distance);
    if peaks.len() < 2 {
        let max = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return Ok(vec![max; n]);
    }
    let mut env = vec![0.0; n];
    let (p0, pn) = (peaks[0], peaks[peaks.len() - 1]);
    env[..=p0].iter_mut().for_each(|v| *v = signal[p0]);
    env[pn..].iter_mut().for_each(|v| *v = signal[pn]);
    for w in peaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ya, yb) = (signal[a], signal[b]);
        let span = (b - a) as f64;
        for (i, v) in env[a..=b].iter_mut().enumerate() {
            let t = i as f64 / span;
            *v = ya + (yb - ya) * t;
        }
        env[b] = yb;
    }
    Ok(env)
}

/// Index of each stream inside a [`StreamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Signal = 0,
    FirstDerivative = 1,
    SecondDerivative = 2,
    SignalEnvelope = 3,
    FirstDerivativeEnvelope = 4,
    SecondDerivativeEnvelope = 5,
}

pub const STREAM_COLUMNS: [&str; 6] = ["x", "dx", "ddx", "ex", "edx", "eddx"];

/// The six preprocessed streams of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSet {
    pub streams: [Vec<f64>; 6],
    pub fs: f64,
}

impl StreamSet {
    pub fn len(&self) -> usize {
        self.streams[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stream(&self, s: Stream) -> &[f64] {
        &self.streams[s as usize]
    }

    /// Signal and its derivatives, consumed by the first CNN branch.
    pub fn morphology(&self) -> [&[f64]; 3] {
        [&self.streams[0], &self.streams[1], &self.streams[2]]
    }

    /// The three envelopes, consumed by the second CNN branch.
    pub fn envelopes(&self) -> [&[f64]; 3] {
        [&self.streams[3], &self.streams[4], &self.streams[5]]
    }
}

/// band-pass → z-score → z-scored derivatives → envelopes of the three normalized signals.
pub fn build_streams(channel: &[f64], fs: f64, spec: &FilterSpec) -> Result<StreamSet> {
    let x = zscore(&bandpass(channel, fs, spec)?);
    let (d1, d2) = derivatives(&x, fs)?;
    let dx = zscore(&d1);
    let ddx = zscore(&d2);
    let ex = upper_envelope(&x, fs)?;
    let edx = upper_envelope(&dx, fs)?;
    let eddx = upper_envelope(&ddx, fs)?;
    Ok(StreamSet {
        streams: [x, dx, ddx, ex, edx, eddx],
        fs,
    })
}
