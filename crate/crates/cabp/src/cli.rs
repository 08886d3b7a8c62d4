//! Command-line entry points.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cabp_core::eval::{evaluate, export_bp_histogram, report_tables, Layout, MetricsReport, METRIC_COLUMNS};
use cabp_core::ingest::{make_folds, split_subjects, SubjectRecord, WAVELENGTHS_NM};
use cabp_core::model::{Model, ModelConfig};
use cabp_core::synth::{gen_cohort, SynthConfig};
use cabp_core::train::{fit, prepare_subject, run_cv, PreparedSubject};

use crate::checkpoint::{self, Checkpoint, Preprocess};
use crate::config::RunConfig;
use crate::dataset::{self, export_dataset, import_dataset, write_truth};
use crate::error::{AppError, AppResult};
use crate::logs::{cv_summary_csv, epoch_log_csv, streams_csv};
use crate::plan::{self, PlanFile};

#[derive(Debug, Parser)]
#[command(name = "cabp", version, about = "Curriculum-adversarial blood-pressure estimation from 4-wavelength PPG")]
#[command(after_help = config_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn config_help() -> String {
    RunConfig::help_text()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (manifest, signals and truth table).
    Synth(SynthArgs),
    /// Split subjects into train/test and cross-validation folds.
    Split(SplitArgs),
    /// Train one model on the training split (or one fold of it).
    #[command(after_help = config_help())]
    Train(TrainArgs),
    /// Evaluate checkpoints on the test split and write a report.
    Eval(EvalArgs),
    /// Cross-validate inside the training split.
    #[command(after_help = config_help())]
    Cv(CvArgs),
    /// Train and evaluate every row of a report table.
    #[command(after_help = config_help())]
    Ablate(AblateArgs),
    /// Export SBP/DBP histograms of a dataset.
    Histogram(HistogramArgs),
    /// Dump the six preprocessed streams of one subject's channel.
    Streams(StreamsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub subjects: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Sampling rate, Hz.
    #[arg(long, default_value_t = 100.0)]
    pub fs: f64,
    /// Recording length, seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Subject-specific ripple amplitude relative to the pulse.
    #[arg(long, default_value_t = 0.15)]
    pub nuisance: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Manifest file or the directory holding manifest.csv.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Plan file written by `split`.
    #[arg(long)]
    pub split: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated wavelengths, e.g. 660 or 660,940.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<u32>>,
    #[arg(long)]
    pub no_cls: bool,
    #[arg(long)]
    pub no_adv: bool,
    /// Skip subjects whose preprocessing fails instead of aborting.
    #[arg(long)]
    pub permissive: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Hold out this fold (1-based) for validation.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Checkpoint path; the epoch log is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    Channels,
    Ablation,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Channels => Layout::Channels,
            LayoutArg::Ablation => Layout::Ablation,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One or more checkpoints.
    #[arg(long, required = true, num_args = 1..)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Report path, or `-` for standard output.
    #[arg(long)]
    pub report: String,
    /// Table layout; without it each checkpoint gets one row.
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    #[arg(long)]
    pub permissive: bool,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory for fold checkpoints, logs and the summary.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub layout: LayoutArg,
    /// Output directory for checkpoints, logs and report.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub bin_width: f64,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct StreamsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub subject: String,
    /// Wavelength, nm.
    #[arg(long, default_value_t = 660)]
    pub channel: u32,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: String,
}

/// Parses `args` (program name first) and runs the command. Returns the process exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(command: Command) -> AppResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Histogram(a) => cmd_histogram(&a),
        Command::Streams(a) => cmd_streams(&a),
    }
}

fn write_output(target: &str, text: &str) -> AppResult<()> {
    if target == "-" {
        std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| AppError::data(format!("stdout: {e}")))
    } else {
        write_file(Path::new(target), text)
    }
}

fn write_file(path: &Path, text: &str) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn cmd_synth(a: &SynthArgs) -> AppResult<()> {
    let config = SynthConfig {
        n_subjects: a.subjects,
        fs: a.fs,
        duration_s: a.duration,
        seed: a.seed,
        nuisance_amplitude: a.nuisance,
        ..Default::default()
    };
    config.validate().map_err(|e| AppError::usage(e.to_string()))?;
    let cohort = gen_cohort(&config)?;
    let (records, truths): (Vec<_>, Vec<_>) = cohort.into_iter().unzip();
    export_dataset(&a.out, &records)?;
    write_truth(&a.out.join(dataset::TRUTH_FILE), &truths)?;
    eprintln!("wrote {} subjects to {}", records.len(), a.out.display());
    Ok(())
}

pub fn cmd_split(a: &SplitArgs) -> AppResult<()> {
    let rows = dataset::read_manifest(&dataset::resolve_manifest(&a.manifest))?;
    let ids: Vec<String> = rows.into_iter().map(|r| r.subject_id).collect();
    let split = split_subjects(&ids, a.test_fraction, a.seed)?;
    let folds = make_folds(&split.train_ids, a.folds, a.seed)?;
    eprintln!(
        "{} train / {} test, {} folds",
        split.train_ids.len(),
        split.test_ids.len(),
        folds.k
    );
    plan::write(&a.out, &PlanFile { split, folds: Some(folds) })
}

fn load_config(path: Option<&Path>) -> AppResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Config file plus command-line overrides.
fn effective_config(d: &DataArgs) -> AppResult<RunConfig> {
    let mut cfg = load_config(d.config.as_deref())?;
    if let Some(s) = d.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = d.epochs {
        cfg.train.epochs = e;
    }
    if let Some(ch) = &d.channels {
        cfg.model.channels_used = ch.clone();
    }
    if d.no_cls {
        cfg.set("enable_cls", "false")?;
    }
    if d.no_adv {
        cfg.set("enable_adv", "false")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Preprocesses records; failures abort unless `permissive`, in which case they are reported and skipped.
pub fn prepare_all(records: &[SubjectRecord], pre: &Preprocess, permissive: bool) -> AppResult<Vec<PreparedSubject>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match prepare_subject(r, pre.window_s, &pre.filter) {
            Ok(p) => out.push(p),
            Err(e) if permissive => eprintln!("skipping subject {}: {e}", r.subject_id),
            Err(e) => return Err(AppError::data(format!("subject {}: {e}", r.subject_id))),
        }
    }
    Ok(out)
}

fn select(subjects: &[PreparedSubject], ids: &BTreeSet<String>) -> Vec<PreparedSubject> {
    subjects.iter().filter(|s| ids.contains(&s.subject_id)).cloned().collect()
}

/// Epoch log path beside a checkpoint: `model.ckpt` → `model.log.csv`.
pub fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.csv")
}

fn train_one(
    cfg: &RunConfig,
    model_config: ModelConfig,
    train: &[PreparedSubject],
    validation: Option<&[PreparedSubject]>,
    out: &Path,
) -> AppResult<Checkpoint> {
    let mut mc = model_config;
    mc.num_subjects = train.len();
    let mut tc = cfg.train.clone();
    tc.enable_cls = mc.enable_cls;
    tc.enable_adv = mc.enable_adv;
    let mut model = Model::<f32>::new(mc, tc.seed)?;
    let log = fit(&mut model, train, &tc, validation)?;
    let ckpt = Checkpoint {
        model,
        preprocess: cfg.preprocess,
    };
    checkpoint::save(out, &ckpt)?;
    write_file(&log_path(out), &epoch_log_csv(&log))?;
    eprintln!(
        "trained {} on {} subjects for {} epochs -> {}",
        ckpt.model.config().descriptor(),
        train.len(),
        tc.epochs,
        out.display()
    );
    Ok(ckpt)
}

pub fn cmd_train(a: &TrainArgs) -> AppResult<()> {
    let cfg = effective_config(&a.data)?;
    let plan = plan::read(&a.data.split)?;
    let records = import_dataset(&a.data.data)?;
    let subjects = prepare_all(&records, &cfg.preprocess, a.data.permissive)?;
    let (train_ids, val_ids) = match a.fold {
        None => (plan.split.train_ids.clone(), None),
        Some(k) => {
            let folds = plan.folds.as_ref().ok_or_else(|| AppError::usage("plan file has no folds"))?;
            if k == 0 || k > folds.k {
                return Err(AppError::usage(format!("--fold must lie in 1..={}", folds.k)));
            }
            (folds.train_ids(k - 1), Some(folds.folds[k - 1].clone()))
        }
    };
    let train = select(&subjects, &train_ids);
    let val = val_ids.map(|ids| select(&subjects, &ids));
    train_one(&cfg, cfg.model.clone(), &train, val.as_deref(), &a.out)?;
    Ok(())
}

fn report_row(name: &str, r: &MetricsReport) -> String {
    let (s, d) = (r.sbp, r.dbp);
    let channels: Vec<String> = r.config.channels.iter().map(|c| c.to_string()).collect();
    format!(
        "{name},{},{},{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}",
        channels.join("+"),
        r.config.cls as u8,
        r.config.adv as u8,
        r.n_samples,
        s.mae,
        d.mae,
        s.bhs5,
        d.bhs5,
        s.bhs10,
        d.bhs10,
        s.bhs15,
        d.bhs15
    )
}

pub fn cmd_eval(a: &EvalArgs) -> AppResult<()> {
    let ckpts = a
        .ckpt
        .iter()
        .map(|p| checkpoint::load(p))
        .collect::<AppResult<Vec<_>>>()?;
    let plan = plan::read(&a.split)?;
    let records = import_dataset(&a.data)?;
    let test: Vec<SubjectRecord> = records
        .into_iter()
        .filter(|r| plan.split.test_ids.contains(&r.subject_id))
        .collect();
    let mut reports = Vec::with_capacity(ckpts.len());
    for c in &ckpts {
        let subjects = prepare_all(&test, &c.preprocess, a.permissive)?;
        reports.push(evaluate(&c.model, &subjects)?);
    }
    let text = match a.layout {
        Some(layout) => report_tables(&reports, layout.into())?,
        None => {
            let mut s = format!("checkpoint,channels,cls,adv,n,{METRIC_COLUMNS}\n");
            for (p, r) in a.ckpt.iter().zip(&reports) {
                s.push_str(&report_row(&p.display().to_string(), r));
                s.push('\n');
            }
            s
        }
    };
    write_output(&a.report, &text)
}

pub fn cmd_cv(a: &CvArgs) -> AppResult<()> {
    let cfg = effective_config(&a.data)?;
    let plan = plan::read(&a.data.split)?;
    let folds = plan.folds.ok_or_else(|| AppError::usage("plan file has no folds"))?;
    let records = import_dataset(&a.data.data)?;
    let subjects = prepare_all(&records, &cfg.preprocess, a.data.permissive)?;
    let train = select(&subjects, &plan.split.train_ids);
    let cv = run_cv::<f32>(&train, &folds, &cfg.model, &cfg.train)?;
    for f in &cv.folds {
        let path = a.out.join(format!("fold-{}.ckpt", f.fold + 1));
        checkpoint::save(
            &path,
            &Checkpoint {
                model: f.model.clone(),
                preprocess: cfg.preprocess,
            },
        )?;
        write_file(&log_path(&path), &epoch_log_csv(&f.log))?;
    }
    let summary = cv_summary_csv(&cv);
    write_file(&a.out.join("cv_summary.csv"), &summary)?;
    eprint!("{summary}");
    Ok(())
}

/// Model variants making up the rows of `layout`.
pub fn layout_variants(base: &ModelConfig, layout: Layout) -> Vec<(String, ModelConfig)> {
    match layout {
        Layout::Channels => WAVELENGTHS_NM
            .iter()
            .map(|&nm| vec![nm])
            .chain([WAVELENGTHS_NM.to_vec()])
            .map(|ch| {
                let name = if ch.len() == 1 { ch[0].to_string() } else { "all".into() };
                (name, ModelConfig { channels_used: ch, ..base.clone() })
            })
            .collect(),
        Layout::Ablation => [(false, false), (false, true), (true, false), (true, true)]
            .into_iter()
            .map(|(cls, adv)| {
                let name = match (cls, adv) {
                    (false, false) => "none",
                    (false, true) => "adv",
                    (true, false) => "cls",
                    (true, true) => "cls-adv",
                };
                (
                    name.to_string(),
                    ModelConfig {
                        enable_cls: cls,
                        enable_adv: adv,
                        ..base.clone()
                    },
                )
            })
            .collect(),
    }
}

pub fn cmd_ablate(a: &AblateArgs) -> AppResult<()> {
    let cfg = effective_config(&a.data)?;
    let plan = plan::read(&a.data.split)?;
    let records = import_dataset(&a.data.data)?;
    let subjects = prepare_all(&records, &cfg.preprocess, a.data.permissive)?;
    let train = select(&subjects, &plan.split.train_ids);
    let test = select(&subjects, &plan.split.test_ids);
    let layout: Layout = a.layout.into();
    let mut reports = Vec::new();
    for (name, mc) in layout_variants(&cfg.model, layout) {
        let ckpt = train_one(&cfg, mc, &train, None, &a.out.join(format!("{name}.ckpt")))?;
        reports.push(evaluate(&ckpt.model, &test)?);
    }
    let table = report_tables(&reports, layout)?;
    write_file(&a.out.join("report.csv"), &table)?;
    eprint!("{table}");
    Ok(())
}

pub fn cmd_histogram(a: &HistogramArgs) -> AppResult<()> {
    let records = import_dataset(&a.data)?;
    let targets: Vec<(f64, f64)> = records.iter().map(|r| (r.sbp, r.dbp)).collect();
    let text = export_bp_histogram(&targets, a.bin_width).map_err(|e| AppError::usage(e.to_string()))?;
    write_output(&a.out, &text)
}

pub fn cmd_streams(a: &StreamsArgs) -> AppResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let idx = WAVELENGTHS_NM
        .iter()
        .position(|&w| w == a.channel)
        .ok_or_else(|| AppError::usage(format!("unknown wavelength {}", a.channel)))?;
    let records = import_dataset(&a.data)?;
    let record = records
        .iter()
        .find(|r| r.subject_id == a.subject)
        .ok_or_else(|| AppError::data(format!("subject {} not in dataset", a.subject)))?;
    let prepared = prepare_subject(record, cfg.preprocess.window_s, &cfg.preprocess.filter)?;
    write_output(&a.out, &streams_csv(&prepared.streams[idx]))
}
