//! The synthetic cohort must be learnable from hand-made features before a
//! network is asked to learn it.

use cabp_core::dsp::{bandpass, find_peaks, FilterSpec};
use cabp_core::ingest::label_hypertension;
use cabp_core::synth::{gen_cohort, SynthConfig};

/// Ensemble-averaged raw beat and the index of its peak.
///
/// Beats are located on a 0.5–2 Hz copy so the ripple cannot move the
/// alignment points; averaging the raw signal then cancels the ripple and
/// wander, whose phases are unrelated to the beat train.
fn beat_template(x: &[f64], fs: f64) -> (Vec<f64>, usize) {
    let slow = FilterSpec {
        high_hz: 2.0,
        ..FilterSpec::default()
    };
    let located = bandpass(x, fs, &slow).unwrap();
    let before = (0.5 * fs) as usize;
    let after = (0.8 * fs) as usize;
    let peaks: Vec<usize> = find_peaks(&located, (0.45 * fs) as usize)
        .into_iter()
        .filter(|&p| p >= before && p + after < x.len())
        .collect();
    assert!(peaks.len() > 20, "only {} beats found", peaks.len());
    let mut template = vec![0.0; before + after];
    for &p in &peaks {
        for (t, v) in template.iter_mut().zip(&x[p - before..p + after]) {
            *t += v / peaks.len() as f64;
        }
    }
    let lo = (0.25 * fs) as usize;
    let hi = before + (0.25 * fs) as usize;
    let peak = (lo..hi).max_by(|&a, &b| template[a].total_cmp(&template[b])).unwrap();
    (template, peak)
}

/// Systolic width from the Gaussian log-ratio around the peak, and delay
/// to the dicrotic bump (seconds).
///
/// Only samples within 50 ms of the peak are used for the width; the
/// neighbouring beats contribute nothing measurable there.
fn features(template: &[f64], peak: usize, fs: f64) -> (f64, f64) {
    let k = (0.05 * fs).round() as usize;
    let side = 0.5 * (template[peak - k] + template[peak + k]);
    let dt = k as f64 / fs;
    let sigma = (dt * dt / (2.0 * (template[peak] / side).ln())).sqrt();

    // What the systolic Gaussian leaves behind on the descent is the
    // dicrotic bump.
    let residual = |i: usize| {
        let t = (i as f64 - peak as f64) / fs;
        template[i] - template[peak] * (-t * t / (2.0 * sigma * sigma)).exp()
    };
    let lo = peak + (0.2 * fs) as usize;
    let hi = (peak + (0.5 * fs) as usize).min(template.len() - 1);
    let delay = (lo..hi).max_by(|&a, &b| residual(a).total_cmp(&residual(b))).unwrap() - peak;
    (sigma, delay as f64 / fs)
}

/// Least squares fit of `y` on `[1, x]`, returning in-sample MAE.
fn probe_mae(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    x.iter().zip(y).map(|(a, b)| (icept + slope * a - b).abs()).sum::<f64>() / n
}

#[test]
fn linear_probe_recovers_pressures() {
    let config = SynthConfig {
        n_subjects: 64,
        seed: 3,
        ..Default::default()
    };
    let cohort = gen_cohort(&config).unwrap();
    let mut widths = Vec::new();
    let mut delays = Vec::new();
    let (mut sbp, mut dbp) = (Vec::new(), Vec::new());
    for (record, truth) in &cohort {
        let x = &record.channels[0];
        let (template, peak) = beat_template(x, record.fs);
        let (w, d) = features(&template, peak, record.fs);
        widths.push(w);
        delays.push(d);
        sbp.push(truth.sbp);
        dbp.push(truth.dbp);
    }
    let sbp_mae = probe_mae(&widths, &sbp);
    let dbp_mae = probe_mae(&delays, &dbp);
    eprintln!("probe MAE sbp {sbp_mae:.2} dbp {dbp_mae:.2}");
    assert!(sbp_mae < 3.0, "SBP probe MAE {sbp_mae}");
    assert!(dbp_mae < 3.0, "DBP probe MAE {dbp_mae}");
}

#[test]
fn hypertensive_fraction_matches_latent() {
    let config = SynthConfig {
        n_subjects: 600,
        fs: 25.0,
        duration_s: 30.0,
        seed: 9,
        ..Default::default()
    };
    let cohort = gen_cohort(&config).unwrap();
    let n = cohort.len() as f64;
    let high = cohort.iter().filter(|(_, t)| t.sbp >= 130.0).count() as f64 / n;
    // Binomial standard error at p = 1/3 is about 0.019; allow four of them.
    assert!((high - 1.0 / 3.0).abs() < 0.077, "fraction {high}");
    // dbp reaches 90 only at v = 1, so the label is the sbp rule.
    let labelled = cohort.iter().filter(|(r, _)| r.hypertensive()).count() as f64 / n;
    assert_eq!(labelled, high);
    assert!(cohort.iter().all(|(r, t)| r.hypertensive() == label_hypertension(t.sbp, t.dbp)));
}
