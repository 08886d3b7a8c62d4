//! Synthetic four-wavelength PPG cohorts with a known signal-to-pressure mapping.
//!
//! Each subject draws latents `u, v ∈ [0, 1]`. Pressure is a fixed linear
//! function of them, and they shape every beat: `u` widens the systolic
//! bump, `v` delays the dicrotic bump. Pressure therefore lives in
//! morphology, which survives band-pass filtering and z-scoring, not in
//! amplitude, which does not.
//!
//! Subjects also carry nuisance structure unrelated to pressure: a heart
//! rate, a subject-specific ripple inside the pass band, per-channel gains
//! and a slow baseline wander below the pass band.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::SubjectRecord;
use crate::rng::{derive_indexed, indexed_rng, Prng};
use crate::{Error, Result};

// Supplies float math when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

/// Frequency of the baseline wander, Hz.
pub const WANDER_HZ: f64 = 0.2;

/// Affine map `base + span·latent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub base: f64,
    pub span: f64,
}

impl Linear {
    pub fn at(&self, latent: f64) -> f64 {
        self.base + self.span * latent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub seed: u64,
    /// Heart-rate range, beats per minute.
    pub heart_rate_bpm: (f64, f64),
    pub sbp: Linear,
    pub dbp: Linear,
    /// Standard deviation of the systolic bump (s) as a function of `u`.
    pub systolic_width_s: Linear,
    /// Systolic-to-dicrotic delay (s) as a function of `v`.
    pub dicrotic_delay_s: Linear,
    pub dicrotic_width_s: f64,
    pub dicrotic_ratio: f64,
    /// Ripple amplitude relative to the systolic bump; zero disables it.
    pub nuisance_amplitude: f64,
    /// Range of the per-subject ripple frequency, Hz.
    pub ripple_hz: (f64, f64),
    /// Range of per-channel gains.
    pub gain_range: (f64, f64),
    /// Baseline wander amplitude relative to the systolic bump.
    pub wander_amplitude: f64,
    /// Pulse-to-noise power ratio, dB.
    pub snr_db: f64,
    /// Relative beat-to-beat period jitter.
    pub period_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 64,
            fs: 100.0,
            duration_s: 60.0,
            seed: 0,
            heart_rate_bpm: (60.0, 100.0),
            sbp: Linear { base: 90.0, span: 60.0 },
            dbp: Linear { base: 60.0, span: 30.0 },
            systolic_width_s: Linear { base: 0.06, span: 0.06 },
            dicrotic_delay_s: Linear { base: 0.28, span: 0.14 },
            dicrotic_width_s: 0.05,
            dicrotic_ratio: 0.5,
            nuisance_amplitude: 0.15,
            ripple_hz: (2.5, 6.0),
            gain_range: (0.8, 1.2),
            wander_amplitude: 0.5,
            snr_db: 30.0,
            period_jitter: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs >= 25.0) {
            return Err(Error::invalid(format!("synthetic fs must be >= 25 Hz, got {}", self.fs)));
        }
        if !(self.duration_s >= 30.0) {
            return Err(Error::invalid(format!("synthetic duration must be >= 30 s, got {}", self.duration_s)));
        }
        if self.n_subjects < 2 {
            return Err(Error::invalid(format!("need at least 2 subjects, got {}", self.n_subjects)));
        }
        let (lo, hi) = self.heart_rate_bpm;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid("heart-rate range must be positive and ordered"));
        }
        if !(self.snr_db >= 20.0) {
            return Err(Error::invalid(format!("SNR must be >= 20 dB, got {}", self.snr_db)));
        }
        let (glo, ghi) = self.gain_range;
        if !(glo > 0.0 && ghi >= glo) {
            return Err(Error::invalid("gain range must be positive and ordered"));
        }
        if !(self.systolic_width_s.base > 0.0 && self.dicrotic_width_s > 0.0) {
            return Err(Error::invalid("bump widths must be positive"));
        }
        Ok(())
    }
}

/// What the generator decided for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub subject_id: String,
    pub u: f64,
    pub v: f64,
    pub sbp: f64,
    pub dbp: f64,
    pub heart_rate_bpm: f64,
    pub wander_phase: f64,
    pub ripple_hz: f64,
    pub ripple_phase: f64,
    pub gains: [f64; 4],
}

/// `(sbp, dbp)` for latents `u, v`.
pub fn pressures(u: f64, v: f64, config: &SynthConfig) -> (f64, f64) {
    (config.sbp.at(u), config.dbp.at(v))
}

fn gaussian(t: f64, centre: f64, sigma: f64) -> f64 {
    let z = (t - centre) / sigma;
    (-0.5 * z * z).exp()
}

fn between(rng: &mut Prng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Generates one subject, drawing `u` and `v` from `seed`.
pub fn gen_subject(subject_id: &str, seed: u64, config: &SynthConfig) -> Result<(SubjectRecord, SynthTruth)> {
    let mut rng = indexed_rng(seed, "synth-latent", 0);
    let u = rng.random_range(0.0..=1.0);
    let v = rng.random_range(0.0..=1.0);
    gen_subject_with_latents(subject_id, seed, u, v, config)
}

/// Generates one subject with fixed latents; nuisance still comes from `seed`.
pub fn gen_subject_with_latents(
    subject_id: &str,
    seed: u64,
    u: f64,
    v: f64,
    config: &SynthConfig,
) -> Result<(SubjectRecord, SynthTruth)> {
    config.validate()?;
    if !((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)) {
        return Err(Error::invalid(format!("latents must lie in [0, 1], got {u}, {v}")));
    }
    let mut rng = indexed_rng(seed, "synth-nuisance", 0);
    let heart_rate_bpm = between(&mut rng, config.heart_rate_bpm);
    let wander_phase = rng.random_range(0.0..2.0 * PI);
    let ripple_hz = between(&mut rng, config.ripple_hz);
    let ripple_phase = rng.random_range(0.0..2.0 * PI);
    let gains = [(); 4].map(|_| between(&mut rng, config.gain_range));
    let (sbp, dbp) = pressures(u, v, config);

    let n = (config.fs * config.duration_s).round() as usize;
    let dt = 1.0 / config.fs;
    let sys_sigma = config.systolic_width_s.at(u);
    let delay = config.dicrotic_delay_s.at(v);
    let sys_at = 3.0 * config.systolic_width_s.at(1.0);
    let reach = sys_at + delay + 4.0 * config.dicrotic_width_s.max(sys_sigma);
    let mean_period = 60.0 / heart_rate_bpm;

    let mut pulse = alloc::vec![0.0; n];
    let mut onset = -rng.random_range(0.0..mean_period);
    let end = config.duration_s;
    while onset < end {
        let first = ((onset / dt).ceil().max(0.0)) as usize;
        let last = (((onset + reach) / dt).floor() as usize).min(n.saturating_sub(1));
        for (i, p) in pulse.iter_mut().enumerate().take(last + 1).skip(first) {
            let t = i as f64 * dt - onset;
            *p += gaussian(t, sys_at, sys_sigma)
                + config.dicrotic_ratio * gaussian(t, sys_at + delay, config.dicrotic_width_s);
        }
        let jitter = 1.0 + config.period_jitter * rng.random_range(-1.0..1.0);
        onset += mean_period * jitter;
    }
    for (i, p) in pulse.iter_mut().enumerate() {
        let t = i as f64 * dt;
        *p += config.nuisance_amplitude * (2.0 * PI * ripple_hz * t + ripple_phase).sin();
    }
    let mean = pulse.iter().sum::<f64>() / n as f64;
    let power = pulse.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n as f64;
    let noise_std = (power / 10f64.powf(config.snr_db / 10.0)).sqrt();
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(format!("{e}")))?;

    let channels = gains.map(|gain| {
        (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                let wander = config.wander_amplitude * (2.0 * PI * WANDER_HZ * t + wander_phase).sin();
                gain * pulse[i] + wander + gain * noise.sample(&mut rng)
            })
            .collect::<Vec<f64>>()
    });
    let record = SubjectRecord::new(subject_id, config.fs, channels, sbp, dbp)?;
    let truth = SynthTruth {
        subject_id: subject_id.into(),
        u,
        v,
        sbp,
        dbp,
        heart_rate_bpm,
        wander_phase,
        ripple_hz,
        ripple_phase,
        gains,
    };
    Ok((record, truth))
}

/// Subject id for the zero-based index `i`: `synth-0001`, `synth-0002`, ...
pub fn subject_id(i: usize) -> String {
    format!("synth-{:04}", i + 1)
}

/// `n_subjects` subjects, each seeded from `config.seed` and its index.
pub fn gen_cohort(config: &SynthConfig) -> Result<Vec<(SubjectRecord, SynthTruth)>> {
    config.validate()?;
    (0..config.n_subjects)
        .map(|i| gen_subject(&subject_id(i), derive_indexed(config.seed, "synth-subject", i as u64), config))
        .collect()
}
