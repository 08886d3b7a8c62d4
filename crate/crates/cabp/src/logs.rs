//! CSV renderings of training logs and intermediate signals.

use std::fmt::Write;

use cabp_core::dsp::{StreamSet, STREAM_COLUMNS};
use cabp_core::train::{CvOutcome, EpochLog};

pub const EPOCH_LOG_HEADER: &str = "epoch,lambda1,L_reg,L_cls,L_adv,L_total,disc_acc,val_mae_sbp,val_mae_dbp";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per epoch; cells of disabled heads or absent validation are empty.
pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{EPOCH_LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.lambda1,
            e.l_reg,
            opt(e.l_cls),
            opt(e.l_adv),
            e.l_total,
            opt(e.disc_acc),
            opt(e.val_mae_sbp),
            opt(e.val_mae_dbp)
        );
    }
    out
}

/// The six streams of one channel with a time column.
pub fn streams_csv(set: &StreamSet) -> String {
    let mut out = format!("t,{}\n", STREAM_COLUMNS.join(","));
    for i in 0..set.len() {
        let _ = write!(out, "{}", i as f64 / set.fs);
        for s in &set.streams {
            let _ = write!(out, ",{}", s[i]);
        }
        out.push('\n');
    }
    out
}

/// Per-fold validation MAE plus mean and standard deviation rows.
pub fn cv_summary_csv<T>(cv: &CvOutcome<T>) -> String {
    let mut out = String::from("fold,n_val,mae_sbp,mae_dbp\n");
    for f in &cv.folds {
        let _ = writeln!(out, "{},{},{},{}", f.fold + 1, f.validation.n_samples, f.validation.sbp.mae, f.validation.dbp.mae);
    }
    let _ = writeln!(out, "mean,,{},{}", cv.mae_sbp.mean, cv.mae_dbp.mean);
    let _ = writeln!(out, "std,,{},{}", cv.mae_sbp.std, cv.mae_dbp.std);
    out
}
