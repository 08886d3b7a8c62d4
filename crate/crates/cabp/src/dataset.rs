//! Manifest and per-subject signal CSVs.
//!
//! The manifest has the header `subject_id,signal_file,fs,sbp,dbp`;
//! `signal_file` is relative to the manifest's directory. Sources with two
//! reference readings may add `sbp_2,dbp_2`; a row with both pairs is
//! imported as their average, and empty second-pair cells mean one reading. Each signal file
//! has the header `t,ch660,ch730,ch850,ch940`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use cabp_core::ingest::SubjectRecord;
use cabp_core::synth::SynthTruth;

use crate::error::{AppError, AppResult};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SIGNAL_DIR: &str = "signals";
pub const TRUTH_FILE: &str = "truth.csv";
pub const MANIFEST_HEADER: [&str; 5] = ["subject_id", "signal_file", "fs", "sbp", "dbp"];
/// Optional trailing columns holding a second reference reading.
pub const SECOND_PAIR: [&str; 2] = ["sbp_2", "dbp_2"];
pub const SIGNAL_HEADER: [&str; 5] = ["t", "ch660", "ch730", "ch850", "ch940"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub subject_id: String,
    pub signal_file: String,
    pub fs: f64,
    pub sbp: f64,
    pub dbp: f64,
}

/// Accepts either a manifest file or a directory holding `manifest.csv`.
pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn reader(path: &Path) -> AppResult<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file))
}

fn number(field: &str, what: &str, id: &str) -> AppResult<f64> {
    field
        .parse::<f64>()
        .map_err(|_| AppError::data(format!("subject {id}: cannot parse {what} {field:?}")))
}

fn check_header(rdr: &mut csv::Reader<fs::File>, expected: &[&str], path: &Path) -> AppResult<()> {
    let header = rdr.headers().map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(AppError::data(format!(
            "{}: expected header {}, found {}",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> AppResult<Vec<ManifestRow>> {
    let mut rdr = reader(path)?;
    let with_second: Vec<&str> = MANIFEST_HEADER.iter().chain(&SECOND_PAIR).copied().collect();
    let width = {
        let header = rdr.headers().map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        if header.len() == with_second.len() { with_second.len() } else { MANIFEST_HEADER.len() }
    };
    check_header(&mut rdr, &with_second[..width], path)?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        if rec.len() != width {
            return Err(AppError::data(format!(
                "{} row {}: expected {width} fields, found {}",
                path.display(),
                line + 1,
                rec.len()
            )));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(AppError::data(format!("subject {id}: listed twice in manifest")));
        }
        let mut sbp = number(&rec[3], "sbp", &id)?;
        let mut dbp = number(&rec[4], "dbp", &id)?;
        if width > MANIFEST_HEADER.len() {
            match (&rec[5], &rec[6]) {
                ("", "") => {}
                (s2, d2) => {
                    sbp = 0.5 * (sbp + number(s2, "sbp_2", &id)?);
                    dbp = 0.5 * (dbp + number(d2, "dbp_2", &id)?);
                }
            }
        }
        rows.push(ManifestRow {
            fs: number(&rec[2], "fs", &id)?,
            sbp,
            dbp,
            signal_file: rec[1].to_string(),
            subject_id: id,
        });
    }
    Ok(rows)
}

/// Reads the four channel columns of one subject's signal file.
pub fn read_signals(path: &Path, subject_id: &str) -> AppResult<[Vec<f64>; 4]> {
    let mut rdr = reader(path).map_err(|e| AppError::data(format!("subject {subject_id}: {e}")))?;
    let header = rdr
        .headers()
        .map_err(|e| AppError::data(format!("subject {subject_id}: {e}")))?
        .clone();
    if header.len() != SIGNAL_HEADER.len() {
        return Err(AppError::data(format!(
            "subject {subject_id}: channel count ≠ 4 ({} signal columns)",
            header.len().saturating_sub(1)
        )));
    }
    if header.iter().ne(SIGNAL_HEADER) {
        return Err(AppError::data(format!(
            "subject {subject_id}: expected header {}",
            SIGNAL_HEADER.join(",")
        )));
    }
    let mut channels: [Vec<f64>; 4] = Default::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AppError::data(format!("subject {subject_id}: {e}")))?;
        if rec.len() != SIGNAL_HEADER.len() {
            return Err(AppError::data(format!(
                "subject {subject_id}: ragged channel lengths (row {} has {} signal columns)",
                line + 1,
                rec.len().saturating_sub(1)
            )));
        }
        for (ch, field) in channels.iter_mut().zip(rec.iter().skip(1)) {
            ch.push(number(field, "sample", subject_id)?);
        }
    }
    Ok(channels)
}

/// Loads every subject in manifest order. Any bad subject fails the whole import.
pub fn import_dataset(manifest: &Path) -> AppResult<Vec<SubjectRecord>> {
    let manifest = resolve_manifest(manifest);
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(&manifest)?
        .into_iter()
        .map(|row| {
            let channels = read_signals(&base.join(&row.signal_file), &row.subject_id)?;
            Ok(SubjectRecord::new(row.subject_id, row.fs, channels, row.sbp, row.dbp)?)
        })
        .collect()
}

fn writer(path: &Path) -> AppResult<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::data(format!("{}: {e}", path.display()))
}

/// Writes one signal file. Sample times are `i / fs`.
pub fn write_signals(path: &Path, record: &SubjectRecord) -> AppResult<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(SIGNAL_HEADER).map_err(&err)?;
    for i in 0..record.len() {
        let t = i as f64 / record.fs;
        let row = [t, record.channels[0][i], record.channels[1][i], record.channels[2][i], record.channels[3][i]];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(&err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Writes `manifest.csv` and `signals/<id>.csv` under `dir`.
pub fn export_dataset(dir: &Path, records: &[SubjectRecord]) -> AppResult<()> {
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = writer(&manifest)?;
    let err = csv_err(&manifest);
    w.write_record(MANIFEST_HEADER).map_err(&err)?;
    for r in records {
        let rel = format!("{SIGNAL_DIR}/{}.csv", r.subject_id);
        write_signals(&dir.join(&rel), r)?;
        w.write_record([r.subject_id.clone(), rel, r.fs.to_string(), r.sbp.to_string(), r.dbp.to_string()])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| AppError::io(&manifest, e))
}

/// Truth table `subject_id,u,v,sbp,dbp`.
pub fn write_truth(path: &Path, truths: &[SynthTruth]) -> AppResult<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["subject_id", "u", "v", "sbp", "dbp"]).map_err(&err)?;
    for t in truths {
        w.write_record([t.subject_id.clone(), t.u.to_string(), t.v.to_string(), t.sbp.to_string(), t.dbp.to_string()])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}
