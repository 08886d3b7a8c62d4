//! Subject records, hypertension labelling, window extraction and
//! subject-level train/test splits.
//!
//! Splitting always happens on subject identity. Nothing downstream sees a
//! subject on both sides of a split.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng::component_rng;
use crate::{Error, Result};

/// Channel wavelengths in nm, in storage order.
pub const WAVELENGTHS_NM: [u32; 4] = [660, 730, 850, 940];

pub const SBP_THRESHOLD_MMHG: f64 = 130.0;
pub const DBP_THRESHOLD_MMHG: f64 = 90.0;

/// Default analysis window, seconds.
pub const WINDOW_S: f64 = 30.0;

/// One subject's four-channel raw PPG and reference pressures.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// Sampling rate, Hz.
    pub fs: f64,
    /// Raw amplitudes ordered as [`WAVELENGTHS_NM`].
    pub channels: [Vec<f64>; 4],
    pub sbp: f64,
    pub dbp: f64,
}

impl SubjectRecord {
    pub fn new(
        subject_id: impl Into<String>,
        fs: f64,
        channels: [Vec<f64>; 4],
        sbp: f64,
        dbp: f64,
    ) -> Result<Self> {
        let record = Self {
            subject_id: subject_id.into(),
            fs,
            channels,
            sbp,
            dbp,
        };
        record.validate()?;
        Ok(record)
    }

    /// Checks the structural invariants (not the minimum duration).
    pub fn validate(&self) -> Result<()> {
        let id = self.subject_id.as_str();
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::subject(id, format!("non-positive sampling rate {}", self.fs)));
        }
        let n = self.channels[0].len();
        if n == 0 {
            return Err(Error::subject(id, "empty signal"));
        }
        if let Some((i, c)) = self.channels.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(Error::subject(
                id,
                format!(
                    "ragged channels: {} nm has {} samples, {} nm has {}",
                    WAVELENGTHS_NM[0],
                    n,
                    WAVELENGTHS_NM[i],
                    c.len()
                ),
            ));
        }
        if self.channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::subject(id, "non-finite sample"));
        }
        if !(self.dbp > 0.0 && self.sbp > self.dbp) {
            return Err(Error::subject(
                id,
                format!("expected sbp > dbp > 0, got sbp={} dbp={}", self.sbp, self.dbp),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    /// Errors unless the record holds at least `duration_s` seconds.
    pub fn check_min_duration(&self, duration_s: f64) -> Result<()> {
        let need = window_len(self.fs, duration_s);
        if self.len() < need {
            return Err(Error::subject(
                &self.subject_id,
                format!(
                    "recording has {} samples, need at least {} ({} s at {} Hz)",
                    self.len(),
                    need,
                    duration_s,
                    self.fs
                ),
            ));
        }
        Ok(())
    }

    pub fn hypertensive(&self) -> bool {
        label_hypertension(self.sbp, self.dbp)
    }
}

/// Hypertension rule: SBP ≥ 130 mmHg or DBP ≥ 90 mmHg (both inclusive).
pub fn label_hypertension(sbp: f64, dbp: f64) -> bool {
    sbp >= SBP_THRESHOLD_MMHG || dbp >= DBP_THRESHOLD_MMHG
}

fn window_len(fs: f64, duration_s: f64) -> usize {
    // Tolerate representation error in fs·duration (e.g. 29.999999).
    num_traits::Float::floor(fs * duration_s + 1e-9) as usize
}

/// Slices every channel to the centred `duration_s` window.
///
/// The window holds `floor(duration_s·fs)` samples starting at
/// `floor((N − W) / 2)`.
pub fn extract_middle_window(record: &SubjectRecord, duration_s: f64) -> Result<SubjectRecord> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid(format!("window duration must be positive, got {duration_s}")));
    }
    record.check_min_duration(duration_s)?;
    let n = record.len();
    let w = window_len(record.fs, duration_s);
    let start = (n - w) / 2;
    let channels = record.channels.clone().map(|c| c[start..start + w].to_vec());
    Ok(SubjectRecord {
        channels,
        ..record.clone()
    })
}

/// Subject-level train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub seed: u64,
}

impl SplitPlan {
    /// Verifies disjointness and that the union is exactly `all_ids`.
    pub fn check(&self, all_ids: &BTreeSet<String>) -> Result<()> {
        if let Some(id) = self.train_ids.intersection(&self.test_ids).next() {
            return Err(Error::subject(id, "appears in both train and test"));
        }
        let union: BTreeSet<String> = self.train_ids.union(&self.test_ids).cloned().collect();
        if &union != all_ids {
            return Err(Error::invalid("split does not cover the cohort exactly"));
        }
        Ok(())
    }
}

fn check_unique(ids: &[String]) -> Result<BTreeSet<String>> {
    let mut set = BTreeSet::new();
    for id in ids {
        if !set.insert(id.clone()) {
            return Err(Error::subject(id, "duplicate subject id"));
        }
    }
    Ok(set)
}

/// Number of test subjects for a cohort of `n`; both sides keep at least one subject.
pub fn test_count(n: usize, test_fraction: f64) -> usize {
    let raw = num_traits::Float::round(test_fraction * n as f64) as usize;
    raw.clamp(1, n - 1)
}

/// Random subject-level split with `round(test_fraction·n)` test subjects.
///
/// The result depends only on the id set and the seed, not on input order.
pub fn split_subjects(ids: &[String], test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if ids.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 subjects to split, got {}", ids.len())));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let set = check_unique(ids)?;
    let mut order: Vec<String> = set.into_iter().collect();
    order.shuffle(&mut component_rng(seed, "split"));
    let n_test = test_count(order.len(), test_fraction);
    let test_ids = order[..n_test].iter().cloned().collect();
    let train_ids = order[n_test..].iter().cloned().collect();
    Ok(SplitPlan {
        train_ids,
        test_ids,
        seed,
    })
}

/// K-fold partition of the training subjects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<BTreeSet<String>>,
    pub k: usize,
}

impl FoldPlan {
    pub fn check(&self, train_ids: &BTreeSet<String>) -> Result<()> {
        if self.folds.len() != self.k {
            return Err(Error::invalid(format!("expected {} folds, found {}", self.k, self.folds.len())));
        }
        let mut seen = BTreeSet::new();
        for fold in &self.folds {
            for id in fold {
                if !seen.insert(id.clone()) {
                    return Err(Error::subject(id, "appears in more than one fold"));
                }
            }
        }
        if &seen != train_ids {
            return Err(Error::invalid("folds do not cover the training set exactly"));
        }
        let max = self.folds.iter().map(BTreeSet::len).max().unwrap_or(0);
        let min = self.folds.iter().map(BTreeSet::len).min().unwrap_or(0);
        if max - min > 1 {
            return Err(Error::invalid(format!("fold sizes range {min}..{max}")));
        }
        Ok(())
    }

    /// Training ids for fold `k`: every fold except the held-out one.
    pub fn train_ids(&self, k: usize) -> BTreeSet<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Balanced random partition of `train_ids` into `k` folds (sizes differ by at most one).
pub fn make_folds(train_ids: &BTreeSet<String>, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::invalid("fold count must be positive"));
    }
    if k > train_ids.len() {
        return Err(Error::invalid(format!(
            "cannot make {k} folds from {} training subjects",
            train_ids.len()
        )));
    }
    let mut order: Vec<&String> = train_ids.iter().collect();
    order.shuffle(&mut component_rng(seed, "folds"));
    let mut folds = alloc::vec![BTreeSet::new(); k];
    for (i, id) in order.into_iter().enumerate() {
        folds[i % k].insert(id.clone());
    }
    Ok(FoldPlan { folds, k })
}
