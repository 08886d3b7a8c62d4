//! Error metrics, per-configuration reports and table-shaped CSV output.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::ingest::WAVELENGTHS_NM;
use crate::model::{ModelConfig, Model};
use crate::train::{batch_input, PreparedSubject};
use crate::{Error, Real, Result};

// Supplies float math when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

/// BHS thresholds, mmHg.
pub const BHS_THRESHOLDS: [f64; 3] = [5.0, 10.0, 15.0];

const EVAL_BATCH: usize = 32;

fn check_pairs(preds: &[f64], refs: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    if preds.len() != refs.len() {
        return Err(Error::shape("metric", &[preds.len()], &[refs.len()]));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(preds: &[f64], refs: &[f64]) -> Result<f64> {
    check_pairs(preds, refs)?;
    let sum: f64 = preds.iter().zip(refs).map(|(p, r)| (p - r).abs()).sum();
    Ok(sum / preds.len() as f64)
}

/// Percentage of samples whose absolute error is strictly below `threshold`.
pub fn bhs(preds: &[f64], refs: &[f64], threshold: f64) -> Result<f64> {
    check_pairs(preds, refs)?;
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be positive, got {threshold}")));
    }
    let hits = preds.iter().zip(refs).filter(|(p, r)| (*p - *r).abs() < threshold).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetMetrics {
    pub mae: f64,
    pub bhs5: f64,
    pub bhs10: f64,
    pub bhs15: f64,
}

impl TargetMetrics {
    pub fn compute(preds: &[f64], refs: &[f64]) -> Result<Self> {
        let [t5, t10, t15] = BHS_THRESHOLDS;
        let m = Self {
            mae: mae(preds, refs)?,
            bhs5: bhs(preds, refs, t5)?,
            bhs10: bhs(preds, refs, t10)?,
            bhs15: bhs(preds, refs, t15)?,
        };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        let ordered = 0.0 <= self.bhs5 && self.bhs5 <= self.bhs10 && self.bhs10 <= self.bhs15 && self.bhs15 <= 100.0;
        if !ordered || !(self.mae >= 0.0) {
            return Err(Error::invalid(format!("metric invariant violated: {self:?}")));
        }
        Ok(())
    }
}

/// Channels and enabled heads of the model a report describes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigDescriptor {
    pub channels: Vec<u32>,
    pub cls: bool,
    pub adv: bool,
}

impl From<&ModelConfig> for ConfigDescriptor {
    fn from(c: &ModelConfig) -> Self {
        Self {
            channels: c.channels_used.clone(),
            cls: c.enable_cls,
            adv: c.enable_adv,
        }
    }
}

impl ConfigDescriptor {
    fn all_channels(&self) -> bool {
        let mut c = self.channels.clone();
        c.sort_unstable();
        c == WAVELENGTHS_NM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub sbp: TargetMetrics,
    pub dbp: TargetMetrics,
    pub n_samples: usize,
    pub config: ConfigDescriptor,
}

impl MetricsReport {
    /// `preds` and `refs` are `(sbp, dbp)` pairs in mmHg.
    pub fn from_predictions(preds: &[(f64, f64)], refs: &[(f64, f64)], config: ConfigDescriptor) -> Result<Self> {
        let col = |v: &[(f64, f64)], i: usize| -> Vec<f64> { v.iter().map(|p| if i == 0 { p.0 } else { p.1 }).collect() };
        Ok(Self {
            sbp: TargetMetrics::compute(&col(preds, 0), &col(refs, 0))?,
            dbp: TargetMetrics::compute(&col(preds, 1), &col(refs, 1))?,
            n_samples: preds.len(),
            config,
        })
    }
}

/// Eval-mode predictions in mmHg, in subject order.
pub fn predict<T: Real>(model: &Model<T>, subjects: &[PreparedSubject]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(subjects.len());
    for chunk in subjects.chunks(EVAL_BATCH) {
        let refs: Vec<&PreparedSubject> = chunk.iter().collect();
        let input = batch_input::<T>(&refs, model.config())?;
        out.extend(model.predict_mmhg(&input)?);
    }
    Ok(out)
}

/// Scores the regression head against the subjects' references.
pub fn evaluate<T: Real>(model: &Model<T>, subjects: &[PreparedSubject]) -> Result<MetricsReport> {
    let preds = predict(model, subjects)?;
    let refs: Vec<(f64, f64)> = subjects.iter().map(|s| (s.sbp, s.dbp)).collect();
    MetricsReport::from_predictions(&preds, &refs, model.config().into())
}

/// Row sets of the two report tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// One row per single wavelength plus all channels.
    Channels,
    /// Every cls/adv combination.
    Ablation,
}

pub const METRIC_COLUMNS: &str = "mae_sbp,mae_dbp,bhs5_sbp,bhs5_dbp,bhs10_sbp,bhs10_dbp,bhs15_sbp,bhs15_dbp";

/// Published figures for comparison; never used as thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub label: &'static str,
    /// MAE, BHS-5, BHS-10, BHS-15, each as `(sbp, dbp)`.
    pub values: [(f64, f64); 4],
}

pub const REFERENCE_CHANNELS: [ReferenceRow; 5] = [
    ReferenceRow { label: "660", values: [(14.9, 8.6), (24.2, 48.5), (39.4, 69.7), (54.5, 75.8)] },
    ReferenceRow { label: "730", values: [(15.5, 8.2), (21.2, 21.2), (36.4, 66.7), (48.5, 90.9)] },
    ReferenceRow { label: "850", values: [(15.3, 7.7), (21.2, 36.4), (45.5, 72.7), (54.5, 81.8)] },
    ReferenceRow { label: "940", values: [(16.2, 7.3), (21.2, 36.4), (36.4, 69.7), (54.5, 93.9)] },
    ReferenceRow { label: "All", values: [(14.2, 6.4), (24.2, 51.5), (51.5, 75.8), (57.6, 90.9)] },
];

pub const REFERENCE_METHODS: [ReferenceRow; 5] = [
    ReferenceRow { label: "A-BiLSTM", values: [(20.2, 11.5), (15.2, 30.3), (36.4, 45.5), (51.5, 69.7)] },
    ReferenceRow { label: "MLP", values: [(19.3, 10.4), (12.1, 30.3), (33.3, 48.5), (42.4, 78.8)] },
    ReferenceRow { label: "CNN1D", values: [(17.9, 7.5), (15.2, 51.5), (36.4, 66.7), (51.5, 81.8)] },
    ReferenceRow { label: "Multi-CNN", values: [(16.1, 7.2), (15.2, 48.5), (36.4, 63.6), (57.6, 87.9)] },
    ReferenceRow { label: "full", values: [(14.2, 6.4), (24.2, 51.5), (51.5, 75.8), (57.6, 90.9)] },
];

/// Rows ordered none, adv, cls, cls+adv.
pub const REFERENCE_ABLATION: [ReferenceRow; 4] = [
    ReferenceRow { label: "none", values: [(16.1, 7.2), (15.2, 48.5), (36.4, 63.6), (57.6, 87.9)] },
    ReferenceRow { label: "adv", values: [(17.1, 7.1), (9.1, 48.5), (30.3, 78.8), (51.5, 87.9)] },
    ReferenceRow { label: "cls", values: [(14.3, 7.1), (27.3, 33.3), (45.5, 75.8), (60.6, 90.9)] },
    ReferenceRow { label: "cls+adv", values: [(14.2, 6.4), (24.2, 51.5), (51.5, 75.8), (57.6, 90.9)] },
];

fn metric_cells(r: &MetricsReport) -> String {
    let (s, d) = (r.sbp, r.dbp);
    format!(
        "{:.1},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}",
        s.mae, d.mae, s.bhs5, d.bhs5, s.bhs10, d.bhs10, s.bhs15, d.bhs15
    )
}

fn reference_cells(r: &ReferenceRow) -> String {
    let v = r.values;
    format!(
        "{:.1},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}",
        v[0].0, v[0].1, v[1].0, v[1].1, v[2].0, v[2].1, v[3].0, v[3].1
    )
}

/// Renders the reports as a CSV table in `layout` row order.
///
/// Every row must be covered by exactly one report; a trailing comment block
/// lists the published reference figures for the same rows.
pub fn report_tables(reports: &[MetricsReport], layout: Layout) -> Result<String> {
    for r in reports {
        r.sbp.check()?;
        r.dbp.check()?;
    }
    let mut out = String::new();
    let find = |label: &str, pred: &dyn Fn(&ConfigDescriptor) -> bool| -> Result<&MetricsReport> {
        let mut hits = reports.iter().filter(|r| pred(&r.config));
        let first = hits.next().ok_or_else(|| Error::invalid(format!("missing report row {label}")))?;
        if hits.next().is_some() {
            return Err(Error::invalid(format!("more than one report for row {label}")));
        }
        Ok(first)
    };
    match layout {
        Layout::Channels => {
            out.push_str("channel,");
            out.push_str(METRIC_COLUMNS);
            out.push('\n');
            for nm in WAVELENGTHS_NM {
                let r = find(&format!("{nm}"), &|c| c.channels == [nm])?;
                let _ = writeln!(out, "{nm},{}", metric_cells(r));
            }
            let r = find("All", &|c| c.all_channels())?;
            let _ = writeln!(out, "All,{}", metric_cells(r));
            out.push_str("# reference\n");
            for row in &REFERENCE_CHANNELS {
                let _ = writeln!(out, "# {},{}", row.label, reference_cells(row));
            }
        }
        Layout::Ablation => {
            out.push_str("cls,adv,");
            out.push_str(METRIC_COLUMNS);
            out.push('\n');
            let rows = [(false, false), (false, true), (true, false), (true, true)];
            for ((cls, adv), reference) in rows.into_iter().zip(&REFERENCE_ABLATION) {
                let r = find(reference.label, &|c| c.cls == cls && c.adv == adv)?;
                let _ = writeln!(out, "{},{},{}", cls as u8, adv as u8, metric_cells(r));
            }
            out.push_str("# reference\n");
            for row in &REFERENCE_ABLATION {
                let _ = writeln!(out, "# {},{}", row.label, reference_cells(row));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Fixed-width bins aligned to multiples of `width`, from the bin holding
/// the minimum to the bin holding the maximum.
pub fn histogram(values: &[f64], width: f64) -> Result<Vec<Bin>> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::invalid(format!("bin width must be positive, got {width}")));
    }
    if values.is_empty() {
        return Err(Error::invalid("histogram needs at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("histogram values must be finite"));
    }
    let index = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| index(v)).min().expect("non-empty");
    let hi = values.iter().map(|&v| index(v)).max().expect("non-empty");
    let mut bins: Vec<Bin> = (lo..=hi)
        .map(|k| Bin {
            lo: k as f64 * width,
            hi: (k + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in values {
        bins[(index(v) - lo) as usize].count += 1;
    }
    Ok(bins)
}

/// SBP and DBP histograms as CSV `target,bin_lo,bin_hi,count`.
pub fn export_bp_histogram(targets: &[(f64, f64)], width: f64) -> Result<String> {
    let mut out = String::from("target,bin_lo,bin_hi,count\n");
    for (name, values) in [
        ("sbp", targets.iter().map(|t| t.0).collect::<Vec<_>>()),
        ("dbp", targets.iter().map(|t| t.1).collect()),
    ] {
        for b in histogram(&values, width)? {
            let _ = writeln!(out, "{name},{},{},{}", b.lo, b.hi, b.count);
        }
    }
    Ok(out)
}
