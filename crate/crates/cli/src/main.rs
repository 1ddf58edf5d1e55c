//! `astra`: train, cross-validate and undersample from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 unreadable or
//! malformed input, 4 output could not be written, 5 numerical or data
//! domain failure.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use astra_core::data::{
    align_to, orient_labels, parse_csv, parse_sparse, standardize, stratified_folds, undersample_minority,
    write_sparse, Dataset, RawDataset,
};
use astra_core::experiment::{
    build_report, fold_seed, read_runs_csv, render_table, run_cv, undersample_seed, write_eratio_curves, write_runs_csv,
};
use astra_core::metrics::{counting_cm, g_mean, mcc, CountCM};
use astra_core::trainer::{train, write_epoch_csv};
use astra_core::{CvReport, Error, LossKind};
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{apply_train_flags, resolve, Overrides, RunConfig, TrainFlags};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Usage,
    Input,
    Output,
    Numeric,
}

impl Class {
    fn code(self) -> u8 {
        match self {
            Class::Usage => 2,
            Class::Input => 3,
            Class::Output => 4,
            Class::Numeric => 5,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Class::Usage => "config error",
            Class::Input => "input error",
            Class::Output => "output error",
            Class::Numeric => "numeric error",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    class: Class,
    msg: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure {
            class: Class::Usage,
            msg: msg.into(),
        }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            class: Class::Output,
            msg: format!("{}: {e}", path.display()),
        }
    }

    /// Classifies a library error raised outside of file handling.
    fn core(e: Error) -> Self {
        let class = match e {
            Error::Config(_) => Class::Usage,
            Error::Io(_) | Error::Parse { .. } => Class::Input,
            _ => Class::Numeric,
        };
        Failure {
            class,
            msg: e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::core(e)
    }
}

#[derive(Parser)]
#[command(
    name = "astra",
    version,
    about = "Imbalanced binary classification with a learnable-threshold output unit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and keep the best-on-validation snapshot.
    Train {
        #[command(flatten)]
        common: Overrides,
        #[command(flatten)]
        flags: TrainFlags,
        /// Validation file. Without it the dataset is split 3:1:1 by a stratified fold plan.
        #[arg(long, value_name = "PATH")]
        val: Option<PathBuf>,
        /// Test file scored with the snapshot.
        #[arg(long, value_name = "PATH")]
        test: Option<PathBuf>,
    },
    /// Repeated stratified cross-validation over several methods.
    Cv {
        #[command(flatten)]
        common: Overrides,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, value_name = "N")]
        repeats: Option<usize>,
        #[arg(long, value_name = "N")]
        folds: Option<usize>,
        /// Comma-separated subset of bce, gmn, bce-astra, gmn-astra.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        methods: Option<Vec<LossKind>>,
    },
    /// Keep every negative and a seeded sample of positives.
    Undersample {
        #[command(flatten)]
        common: Overrides,
    },
    /// Rebuild the report and table from a runs CSV.
    Report {
        #[command(flatten)]
        common: Overrides,
        /// runs.csv written by `cv`.
        #[arg(long, value_name = "PATH")]
        runs: PathBuf,
    },
}

fn read_raw(path: &Path) -> Result<RawDataset, Failure> {
    let input = |msg: String| Failure {
        class: Class::Input,
        msg: format!("{}: {msg}", path.display()),
    };
    let file = File::open(path).map_err(|e| input(e.to_string()))?;
    let reader = BufReader::new(file);
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let parsed = if is_csv {
        parse_csv(reader)
    } else {
        parse_sparse(reader)
    };
    parsed.map_err(|e| input(e.to_string()))
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    orient_labels(read_raw(path)?).map_err(|e| Failure {
        class: Class::Input,
        msg: format!("{}: {e}", path.display()),
    })
}

fn load_aligned(path: &Path, like: &Dataset) -> Result<Dataset, Failure> {
    align_to(read_raw(path)?, like.labels(), like.n_features()).map_err(|e| Failure {
        class: Class::Input,
        msg: format!("{}: {e}", path.display()),
    })
}

fn require_dataset(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    cfg.dataset
        .clone()
        .ok_or_else(|| Failure::config("no dataset given (use --dataset or set `dataset` in the config)"))
}

/// Writes `name` inside `dir` through a buffered writer.
fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<(), Error>,
) -> Result<(), Failure> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Failure::output(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| match e {
        Error::Io(io) => Failure::output(&path, io),
        other => Failure::core(other),
    })?;
    w.flush().map_err(|e| Failure::output(&path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::output(&dir.join(name), e))?;
    text.push('\n');
    write_text(dir, name, &text)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::output(&path, e))
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::output(dir, e))?;
    write_text(dir, "manifest.toml", &cfg.to_manifest()?)
}

#[derive(Serialize)]
struct TestScore {
    cm: CountCM,
    g_mean: Option<f64>,
    mcc: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    method: LossKind,
    n_train: usize,
    n_val: usize,
    imbalance_ratio: f64,
    epochs_run: usize,
    best_epoch: usize,
    val_fnr_apx: f64,
    slope: f64,
    threshold: f64,
    failure: Option<String>,
    test: Option<TestScore>,
}

fn cmd_train(
    common: &Overrides,
    flags: &TrainFlags,
    val: &Option<PathBuf>,
    test: &Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = resolve(common)?;
    cfg.command = Some("train".into());
    apply_train_flags(&mut cfg, flags);
    if let Some(l) = flags.loss {
        cfg.train.loss.variant = l.into();
    }
    if let Some(a) = flags.astra {
        cfg.train.loss.use_astra = a.is_on();
    }
    if val.is_some() {
        cfg.val.clone_from(val);
    }
    if test.is_some() {
        cfg.test.clone_from(test);
    }
    cfg.train.seed = cfg.seed;
    cfg.train.validate()?;

    let mut full = load_dataset(&require_dataset(&cfg)?)?;
    if let Some(keep) = cfg.keep_positives {
        full = undersample_minority(&full, keep, undersample_seed(cfg.seed, 0))?.0;
    }
    let (train_raw, val_raw, test_raw) = match &cfg.val {
        Some(v) => {
            let val_set = load_aligned(v, &full)?;
            let test_set = cfg.test.as_deref().map(|t| load_aligned(t, &full)).transpose()?;
            (full, val_set, test_set)
        }
        None => {
            if cfg.test.is_some() {
                return Err(Failure::config("a test file needs an explicit validation file"));
            }
            let plan = stratified_folds(&full, cfg.split_folds, fold_seed(cfg.seed, 0))?;
            let split = plan.split(0);
            (
                full.subset(&split.train),
                full.subset(&split.val),
                Some(full.subset(&split.test)),
            )
        }
    };
    let held: Vec<&Dataset> = std::iter::once(&val_raw).chain(test_raw.as_ref()).collect();
    let (train_set, scaled, _) = standardize(&train_raw, &held)?;
    let val_set = &scaled[0];
    let outcome = train(&cfg.train, &train_set, val_set)?;

    let model = &outcome.snapshot.model;
    let test_score = match scaled.get(1) {
        Some(t) => {
            let cm = counting_cm(&model.predict_labels(t.x())?, t.y())?;
            Some(TestScore {
                cm,
                g_mean: g_mean(&cm).ok(),
                mcc: mcc(&cm),
            })
        }
        None => None,
    };
    let summary = TrainSummary {
        method: cfg.train.loss,
        n_train: train_set.len(),
        n_val: val_set.len(),
        imbalance_ratio: train_set.imbalance_ratio(),
        epochs_run: outcome.records.len(),
        best_epoch: outcome.snapshot.epoch,
        val_fnr_apx: outcome.snapshot.val_fnr_apx,
        slope: model.slope(),
        threshold: model.threshold(),
        failure: outcome.failure.clone(),
        test: test_score,
    };

    let out = &common.out;
    prepare_out(out, &cfg)?;
    write_file(out, "epochs.csv", |w| write_epoch_csv(&outcome.records, w))?;
    write_file(out, "checkpoint.txt", |w| model.write_checkpoint(w))?;
    write_json(out, "summary.json", &summary)?;
    if let Some(f) = &outcome.failure {
        eprintln!("astra: warning: training stopped early: {f}");
    }
    Ok(())
}

#[derive(Serialize)]
struct RunFailure {
    method: LossKind,
    repeat: usize,
    fold: usize,
    reason: String,
}

#[derive(Serialize)]
struct CvOutput<'a> {
    #[serde(flatten)]
    report: &'a CvReport,
    failures: Vec<RunFailure>,
}

fn write_report(out: &Path, report: &CvReport, failures: Vec<RunFailure>) -> Result<(), Failure> {
    write_json(out, "report.json", &CvOutput { report, failures })?;
    write_text(out, "report.txt", &render_table(report))
}

fn cmd_cv(
    common: &Overrides,
    flags: &TrainFlags,
    repeats: Option<usize>,
    folds: Option<usize>,
    methods: &Option<Vec<LossKind>>,
) -> Result<(), Failure> {
    let mut cfg = resolve(common)?;
    cfg.command = Some("cv".into());
    apply_train_flags(&mut cfg, flags);
    if let Some(r) = repeats {
        cfg.repeats = r;
    }
    if let Some(k) = folds {
        cfg.folds = k;
    }
    if let Some(m) = methods {
        cfg.methods.clone_from(m);
    }
    if let Some(l) = flags.loss {
        cfg.methods.retain(|m| m.variant == l.into());
    }
    if let Some(a) = flags.astra {
        cfg.methods.retain(|m| m.use_astra == a.is_on());
    }
    cfg.methods.sort();
    let cv = cfg.cv_config();
    cv.validate()?;

    let ds = load_dataset(&require_dataset(&cfg)?)?;
    let results = run_cv(&ds, &cv)?;
    let report = build_report(&results)?;
    let failures: Vec<RunFailure> = results
        .iter()
        .filter_map(|r| {
            r.failure.as_ref().map(|why| RunFailure {
                method: r.method,
                repeat: r.repeat,
                fold: r.fold,
                reason: why.clone(),
            })
        })
        .collect();
    if !failures.is_empty() {
        eprintln!(
            "astra: warning: {} run(s) failed and were scored as collapsed",
            failures.len()
        );
    }

    let out = &common.out;
    prepare_out(out, &cfg)?;
    write_file(out, "runs.csv", |w| write_runs_csv(&results, w))?;
    write_file(out, "eratio_curves.csv", |w| write_eratio_curves(&results, w))?;
    write_report(out, &report, failures)?;
    print!("{}", render_table(&report));
    Ok(())
}

#[derive(Serialize)]
struct Retained {
    seed: u64,
    keep: usize,
    rows: usize,
    positives: usize,
    negatives: usize,
    imbalance_ratio: f64,
    /// 0-based row indices of the kept positives in the input file.
    retained_positive_rows: Vec<usize>,
}

fn cmd_undersample(common: &Overrides) -> Result<(), Failure> {
    let mut cfg = resolve(common)?;
    cfg.command = Some("undersample".into());
    let keep = cfg
        .keep_positives
        .ok_or_else(|| Failure::config("undersample needs --keep-positives"))?;
    let ds = load_dataset(&require_dataset(&cfg)?)?;
    let (sample, kept) = undersample_minority(&ds, keep, undersample_seed(cfg.seed, 0))?;
    let info = Retained {
        seed: cfg.seed,
        keep,
        rows: sample.len(),
        positives: sample.positives(),
        negatives: sample.negatives(),
        imbalance_ratio: sample.imbalance_ratio(),
        retained_positive_rows: kept,
    };

    let out = &common.out;
    prepare_out(out, &cfg)?;
    write_file(out, "undersampled.txt", |w| write_sparse(&sample, w))?;
    write_json(out, "retained.json", &info)
}

fn cmd_report(common: &Overrides, runs: &Path) -> Result<(), Failure> {
    let file = File::open(runs).map_err(|e| Failure {
        class: Class::Input,
        msg: format!("{}: {e}", runs.display()),
    })?;
    let results = read_runs_csv(BufReader::new(file)).map_err(|e| Failure {
        class: Class::Input,
        msg: format!("{}: {e}", runs.display()),
    })?;
    let report = build_report(&results)?;
    let out = &common.out;
    fs::create_dir_all(out).map_err(|e| Failure::output(out, e))?;
    write_report(out, &report, Vec::new())?;
    print!("{}", render_table(&report));
    Ok(())
}

fn jobs(command: &Command) -> Option<usize> {
    match command {
        Command::Train { common, .. }
        | Command::Cv { common, .. }
        | Command::Undersample { common }
        | Command::Report { common, .. } => common.jobs,
    }
}

fn dispatch(command: &Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            common,
            flags,
            val,
            test,
        } => cmd_train(common, flags, val, test),
        Command::Cv {
            common,
            flags,
            repeats,
            folds,
            methods,
        } => cmd_cv(common, flags, *repeats, *folds, methods),
        Command::Undersample { common } => cmd_undersample(common),
        Command::Report { common, runs } => cmd_report(common, runs),
    }
}

#[cfg(feature = "parallel")]
fn run(command: &Command) -> Result<(), Failure> {
    match jobs(command) {
        Some(0) => Err(Failure::config("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::config(format!("cannot start {n} workers: {e}")))?
            .install(|| dispatch(command)),
        None => dispatch(command),
    }
}

#[cfg(not(feature = "parallel"))]
fn run(command: &Command) -> Result<(), Failure> {
    if jobs(command) == Some(0) {
        return Err(Failure::config("--jobs must be at least 1"));
    }
    dispatch(command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("astra: {}: {}", f.class.label(), f.msg);
            ExitCode::from(f.class.code())
        }
    }
}
