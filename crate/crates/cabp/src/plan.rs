//! Split and fold plans as plain text.
//!
//! ```text
//! # seed = 7
//! train:
//! s001
//! test:
//! s002
//! fold-1:
//! s001
//! ```
//!
//! Folds are numbered from 1 in the file and on the command line.

use std::collections::BTreeSet;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use cabp_core::ingest::{FoldPlan, SplitPlan};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq)]
pub struct PlanFile {
    pub split: SplitPlan,
    pub folds: Option<FoldPlan>,
}

pub fn render(plan: &PlanFile) -> String {
    let mut out = format!("# seed = {}\n", plan.split.seed);
    let mut section = |name: &str, ids: &BTreeSet<String>| {
        let _ = writeln!(out, "{name}:");
        for id in ids {
            let _ = writeln!(out, "{id}");
        }
    };
    section("train", &plan.split.train_ids);
    section("test", &plan.split.test_ids);
    if let Some(f) = &plan.folds {
        for (k, fold) in f.folds.iter().enumerate() {
            section(&format!("fold-{}", k + 1), fold);
        }
    }
    out
}

enum Section {
    Train,
    Test,
    Fold(usize),
}

pub fn parse(text: &str) -> AppResult<PlanFile> {
    let mut seed = None;
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    let mut folds: Vec<BTreeSet<String>> = Vec::new();
    let mut current = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("seed") {
                let v = v.trim().trim_start_matches('=').trim();
                seed = Some(v.parse::<u64>().map_err(|_| AppError::data(format!("plan line {}: bad seed {v:?}", n + 1)))?);
            }
            continue;
        }
        if let Some(name) = line.strip_suffix(':') {
            current = Some(match name {
                "train" => Section::Train,
                "test" => Section::Test,
                _ => {
                    let k: usize = name
                        .strip_prefix("fold-")
                        .and_then(|k| k.parse().ok())
                        .filter(|&k| k >= 1)
                        .ok_or_else(|| AppError::data(format!("plan line {}: unknown section {name:?}", n + 1)))?;
                    if k != folds.len() + 1 {
                        return Err(AppError::data(format!("plan line {}: folds must be numbered 1, 2, ... in order", n + 1)));
                    }
                    folds.push(BTreeSet::new());
                    Section::Fold(k - 1)
                }
            });
            continue;
        }
        let set = match current {
            Some(Section::Train) => &mut train,
            Some(Section::Test) => &mut test,
            Some(Section::Fold(k)) => &mut folds[k],
            None => return Err(AppError::data(format!("plan line {}: id outside any section", n + 1))),
        };
        if !set.insert(line.to_string()) {
            return Err(AppError::data(format!("plan line {}: id {line} listed twice", n + 1)));
        }
    }
    let split = SplitPlan {
        train_ids: train,
        test_ids: test,
        seed: seed.unwrap_or(0),
    };
    let all = split.train_ids.union(&split.test_ids).cloned().collect();
    split.check(&all)?;
    let folds = if folds.is_empty() {
        None
    } else {
        let plan = FoldPlan { k: folds.len(), folds };
        plan.check(&split.train_ids)?;
        Some(plan)
    };
    Ok(PlanFile { split, folds })
}

pub fn write(path: &Path, plan: &PlanFile) -> AppResult<()> {
    fs::write(path, render(plan)).map_err(|e| AppError::io(path, e))
}

pub fn read(path: &Path) -> AppResult<PlanFile> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse(&text).map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cabp_core::ingest::{make_folds, split_subjects};

    #[test]
    fn round_trip() {
        let ids: Vec<String> = (0..23).map(|i| format!("s{i:03}")).collect();
        let split = split_subjects(&ids, 0.2, 11).unwrap();
        let folds = make_folds(&split.train_ids, 5, 11).unwrap();
        let plan = PlanFile {
            split,
            folds: Some(folds),
        };
        assert_eq!(parse(&render(&plan)).unwrap(), plan);
    }

    #[test]
    fn rejects_overlap_and_bad_sections() {
        assert!(parse("train:\na\ntest:\na\n").is_err());
        assert!(parse("a\n").is_err());
        assert!(parse("train:\na\nb\ntest:\nc\nfold-2:\na\n").is_err());
        assert!(parse("train:\na\nb\ntest:\nc\nfold-1:\na\n").is_err());
        assert!(parse("train:\na\ntest:\nb\nbogus:\n").is_err());
    }
}
