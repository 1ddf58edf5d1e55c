//! Repeated stratified cross-validation over several training methods, with
//! per-method aggregation, paired significance tests and winner flags.
//!
//! Every method sees the same minority sample, fold plan and initial weight
//! seed within a `(repeat, fold)` cell, so results are paired by that key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::{standardize, stratified_folds, undersample_minority, Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{counting_cm, g_mean, mcc, CountCM};
use crate::par::map_tasks;
use crate::seed::derive_seed;
use crate::stats::wilcoxon_signed_rank;
use crate::trainer::{train, TrainConfig};

/// Significance level for separating two methods.
pub const ALPHA: f64 = 0.05;

const STREAM_UNDERSAMPLE: u64 = 0;
const STREAM_FOLDS: u64 = 1;
const STREAM_INIT: u64 = 2;

/// Seed of the minority sample drawn for `repeat`.
pub fn undersample_seed(base: u64, repeat: usize) -> u64 {
    derive_seed(base, &[STREAM_UNDERSAMPLE, repeat as u64])
}

/// Seed of the fold plan built for `repeat`.
pub fn fold_seed(base: u64, repeat: usize) -> u64 {
    derive_seed(base, &[STREAM_FOLDS, repeat as u64])
}

/// Initial weight seed shared by every method in a `(repeat, fold)` cell.
pub fn init_seed(base: u64, repeat: usize, fold: usize) -> u64 {
    derive_seed(base, &[STREAM_INIT, repeat as u64, fold as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub repeats: usize,
    pub k: usize,
    pub methods: Vec<LossKind>,
    /// Positives kept per repeat; `None` keeps them all.
    pub keep_positives: Option<usize>,
    pub base_seed: u64,
    /// Template for every run. `loss` and `seed` are overwritten per run.
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            repeats: 10,
            k: 5,
            methods: LossKind::ALL.to_vec(),
            keep_positives: None,
            base_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        // Train, validation and test folds must be distinct.
        if self.k < 3 {
            return Err(Error::Config(format!("need at least 3 folds, got {}", self.k)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        let unique: BTreeSet<_> = self.methods.iter().collect();
        if unique.len() != self.methods.len() {
            return Err(Error::Config("methods listed more than once".into()));
        }
        if self.keep_positives == Some(0) {
            return Err(Error::Config("keep_positives must be at least 1".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub repeat: usize,
    pub fold: usize,
    pub method: LossKind,
    pub test_cm: CountCM,
    pub g_mean: f64,
    pub mcc: f64,
    pub best_epoch: usize,
    pub final_b: f64,
    /// Why the run was scored as a collapsed predictor, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Training e-ratio per epoch.
    #[serde(skip)]
    pub e_ratio: Vec<f64>,
}

impl RunResult {
    fn key(&self) -> (LossKind, usize, usize) {
        (self.method, self.repeat, self.fold)
    }
}

/// Matrix of the all-negative predictor on `test`; scores 0 on both metrics.
fn collapsed_cm(test: &Dataset) -> CountCM {
    CountCM {
        tn: test.negatives() as u64,
        fp: 0,
        fn_: test.positives() as u64,
        tp: 0,
    }
}

/// Failed runs keep their last good snapshot's epoch and slope but score as
/// the collapsed predictor.
struct Failure {
    best_epoch: usize,
    final_b: f64,
    why: String,
    e_ratio: Vec<f64>,
}

fn failed_run(repeat: usize, fold: usize, method: LossKind, test: &Dataset, f: Failure) -> RunResult {
    RunResult {
        repeat,
        fold,
        method,
        test_cm: collapsed_cm(test),
        g_mean: 0.0,
        mcc: 0.0,
        best_epoch: f.best_epoch,
        final_b: f.final_b,
        failure: Some(f.why),
        e_ratio: f.e_ratio,
    }
}

fn single_run(
    cfg: &CvConfig,
    ds: &Dataset,
    plan: &FoldPlan,
    repeat: usize,
    fold: usize,
    method: LossKind,
) -> Result<RunResult> {
    let split = plan.split(fold);
    let (train_set, rest, _) = standardize(
        &ds.subset(&split.train),
        &[&ds.subset(&split.val), &ds.subset(&split.test)],
    )?;
    let (val_set, test_set) = (&rest[0], &rest[1]);
    let run_cfg = TrainConfig {
        loss: method,
        seed: init_seed(cfg.base_seed, repeat, fold),
        ..cfg.train.clone()
    };
    let outcome = match train(&run_cfg, &train_set, val_set) {
        Ok(o) => o,
        Err(e) => {
            let final_b = run_cfg.build_model(train_set.n_features())?.slope();
            let f = Failure {
                best_epoch: 0,
                final_b,
                why: e.to_string(),
                e_ratio: Vec::new(),
            };
            return Ok(failed_run(repeat, fold, method, test_set, f));
        }
    };
    let e_ratio: Vec<f64> = outcome.records.iter().map(|r| r.train_e_ratio).collect();
    let model = &outcome.snapshot.model;
    if let Some(why) = outcome.failure {
        let f = Failure {
            best_epoch: outcome.snapshot.epoch,
            final_b: model.slope(),
            why,
            e_ratio,
        };
        return Ok(failed_run(repeat, fold, method, test_set, f));
    }
    let cm = counting_cm(&model.predict_labels(test_set.x())?, test_set.y())?;
    Ok(RunResult {
        repeat,
        fold,
        method,
        test_cm: cm,
        g_mean: g_mean(&cm)?,
        mcc: mcc(&cm),
        best_epoch: outcome.snapshot.epoch,
        final_b: model.slope(),
        failure: None,
        e_ratio,
    })
}

/// Runs `repeats × k` rotations for every method. Results are sorted by
/// `(method, repeat, fold)` regardless of execution order.
pub fn run_cv(ds: &Dataset, cfg: &CvConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let mut per_repeat = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let sample = match cfg.keep_positives {
            Some(keep) => undersample_minority(ds, keep, undersample_seed(cfg.base_seed, r))?.0,
            None => ds.clone(),
        };
        if sample.positives() < cfg.k || sample.negatives() < cfg.k {
            return Err(Error::Config(format!(
                "every fold needs both classes: {} positives and {} negatives for {} folds",
                sample.positives(),
                sample.negatives(),
                cfg.k
            )));
        }
        let plan = stratified_folds(&sample, cfg.k, fold_seed(cfg.base_seed, r))?;
        per_repeat.push((sample, plan));
    }

    let mut tasks = Vec::with_capacity(cfg.repeats * cfg.k * cfg.methods.len());
    for r in 0..cfg.repeats {
        for f in 0..cfg.k {
            for &m in &cfg.methods {
                tasks.push((r, f, m));
            }
        }
    }
    let mut results = map_tasks(tasks, |(r, f, m)| {
        let (sample, plan) = &per_repeat[r];
        single_run(cfg, sample, plan, r, f, m)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(RunResult::key);
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

pub fn mean_sd(values: &[f64]) -> Result<MeanSd> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    // One refinement pass makes the mean of equal values exact.
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(MeanSd { mean, sd })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    GMean,
    Mcc,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::GMean, Metric::Mcc];

    pub fn of(self, r: &RunResult) -> f64 {
        match self {
            Metric::GMean => r.g_mean,
            Metric::Mcc => r.mcc,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::GMean => "G-Mean",
            Metric::Mcc => "MCC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    #[default]
    None,
    /// Best mean and separated from every competitor.
    Winner,
    /// Best mean, or not separable from it.
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    pub mark: Mark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: LossKind,
    pub runs: usize,
    pub g_mean: MetricSummary,
    pub mcc: MetricSummary,
}

impl MethodSummary {
    pub fn metric(&self, m: Metric) -> &MetricSummary {
        match m {
            Metric::GMean => &self.g_mean,
            Metric::Mcc => &self.mcc,
        }
    }

    fn metric_mut(&mut self, m: Metric) -> &mut MetricSummary {
        match m {
            Metric::GMean => &mut self.g_mean,
            Metric::Mcc => &mut self.mcc,
        }
    }
}

/// Paired test of `a` against `b`; the rank sums refer to `a - b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub a: LossKind,
    pub b: LossKind,
    pub n_nonzero: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
}

impl Comparison {
    /// Whether `winner` beats the other method of this pair at [`ALPHA`].
    fn separates(&self, winner: LossKind) -> bool {
        let favours_a = self.w_plus > self.w_minus;
        let favours_b = self.w_minus > self.w_plus;
        self.p_value <= ALPHA && ((winner == self.a && favours_a) || (winner == self.b && favours_b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

impl CvReport {
    pub fn summary(&self, method: LossKind) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method)
    }

    pub fn comparison(&self, metric: Metric, x: LossKind, y: LossKind) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.metric == metric && ((c.a, c.b) == (x, y) || (c.a, c.b) == (y, x)))
    }

    /// Methods flagged as winner or tie for `metric`.
    pub fn flagged(&self, metric: Metric) -> Vec<LossKind> {
        self.methods
            .iter()
            .filter(|s| s.metric(metric).mark != Mark::None)
            .map(|s| s.method)
            .collect()
    }
}

fn group_by_method(results: &[RunResult]) -> BTreeMap<LossKind, Vec<&RunResult>> {
    let mut groups: BTreeMap<LossKind, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.method).or_default().push(r);
    }
    for runs in groups.values_mut() {
        runs.sort_by_key(|r| (r.repeat, r.fold));
    }
    groups
}

/// Per-method mean and sample sd of each metric, in method order. Marks are
/// left unset.
pub fn aggregate(results: &[RunResult]) -> Result<Vec<MethodSummary>> {
    if results.is_empty() {
        return Err(Error::Empty);
    }
    group_by_method(results)
        .into_iter()
        .map(|(method, runs)| {
            let summary = |m: Metric| -> Result<MetricSummary> {
                let v: Vec<f64> = runs.iter().map(|r| m.of(r)).collect();
                let ms = mean_sd(&v)?;
                Ok(MetricSummary {
                    mean: ms.mean,
                    sd: ms.sd,
                    mark: Mark::None,
                })
            };
            Ok(MethodSummary {
                method,
                runs: runs.len(),
                g_mean: summary(Metric::GMean)?,
                mcc: summary(Metric::Mcc)?,
            })
        })
        .collect()
}

/// All pairwise tests, erroring if methods were not run on identical
/// `(repeat, fold)` cells.
pub fn pairwise(results: &[RunResult]) -> Result<Vec<Comparison>> {
    let groups = group_by_method(results);
    let keys: Vec<Vec<(usize, usize)>> = groups
        .values()
        .map(|runs| runs.iter().map(|r| (r.repeat, r.fold)).collect())
        .collect();
    if let Some(first) = keys.first() {
        if keys.iter().any(|k| k != first) {
            return Err(Error::Config(
                "methods were not run on the same (repeat, fold) cells".into(),
            ));
        }
        let mut dedup = first.clone();
        dedup.dedup();
        if dedup.len() != first.len() {
            return Err(Error::Config("duplicate (repeat, fold) results".into()));
        }
    }
    let methods: Vec<(&LossKind, &Vec<&RunResult>)> = groups.iter().collect();
    let mut out = Vec::new();
    for metric in Metric::ALL {
        for (i, (a, ra)) in methods.iter().enumerate() {
            for (b, rb) in &methods[i + 1..] {
                let va: Vec<f64> = ra.iter().map(|r| metric.of(r)).collect();
                let vb: Vec<f64> = rb.iter().map(|r| metric.of(r)).collect();
                let t = wilcoxon_signed_rank(&va, &vb)?;
                out.push(Comparison {
                    metric,
                    a: **a,
                    b: **b,
                    n_nonzero: t.n_nonzero,
                    w_plus: t.w_plus,
                    w_minus: t.w_minus,
                    p_value: t.p_value,
                });
            }
        }
    }
    Ok(out)
}

/// Flags, per metric, the methods with the highest mean plus every method
/// the leaders fail to beat at [`ALPHA`]. A lone flagged method is the
/// winner; otherwise all flagged methods are marked as tied.
pub fn determine_winners(mut methods: Vec<MethodSummary>, comparisons: Vec<Comparison>) -> CvReport {
    for metric in Metric::ALL {
        let best = methods
            .iter()
            .map(|s| s.metric(metric).mean)
            .fold(f64::NEG_INFINITY, f64::max);
        let leaders: Vec<LossKind> = methods
            .iter()
            .filter(|s| s.metric(metric).mean == best)
            .map(|s| s.method)
            .collect();
        let flagged: Vec<bool> = methods
            .iter()
            .map(|s| {
                leaders.contains(&s.method)
                    || leaders.iter().any(|&l| {
                        comparisons
                            .iter()
                            .find(|c| {
                                c.metric == metric && ((c.a, c.b) == (l, s.method) || (c.a, c.b) == (s.method, l))
                            })
                            .is_none_or(|c| !c.separates(l))
                    })
            })
            .collect();
        let count = flagged.iter().filter(|&&f| f).count();
        for (s, f) in methods.iter_mut().zip(flagged) {
            s.metric_mut(metric).mark = match (f, count) {
                (false, _) => Mark::None,
                (true, 1) => Mark::Winner,
                (true, _) => Mark::Tie,
            };
        }
    }
    CvReport { methods, comparisons }
}

pub fn build_report(results: &[RunResult]) -> Result<CvReport> {
    Ok(determine_winners(aggregate(results)?, pairwise(results)?))
}

pub const RUNS_CSV_HEADER: &str = "method,repeat,fold,tn,fp,fn,tp,g_mean,mcc,best_epoch,final_b";

pub fn write_runs_csv<W: Write>(results: &[RunResult], mut out: W) -> Result<()> {
    writeln!(out, "{RUNS_CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.repeat,
            r.fold,
            r.test_cm.tn,
            r.test_cm.fp,
            r.test_cm.fn_,
            r.test_cm.tp,
            r.g_mean,
            r.mcc,
            r.best_epoch,
            r.final_b
        )?;
    }
    Ok(())
}

pub fn read_runs_csv<R: BufRead>(reader: R) -> Result<Vec<RunResult>> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h?,
        None => String::new(),
    };
    if header.trim() != RUNS_CSV_HEADER {
        return Err(Error::parse(1, format!("expected header '{RUNS_CSV_HEADER}'")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim().split(',').collect();
        if cells.len() != 11 {
            return Err(Error::parse(
                lineno,
                format!("expected 11 fields, found {}", cells.len()),
            ));
        }
        let int = |j: usize| -> Result<u64> {
            cells[j]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad integer '{}'", cells[j])))
        };
        let real = |j: usize| -> Result<f64> {
            cells[j]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad number '{}'", cells[j])))
        };
        let method: LossKind = cells[0]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("unknown method '{}'", cells[0])))?;
        out.push(RunResult {
            method,
            repeat: int(1)? as usize,
            fold: int(2)? as usize,
            test_cm: CountCM {
                tn: int(3)?,
                fp: int(4)?,
                fn_: int(5)?,
                tp: int(6)?,
            },
            g_mean: real(7)?,
            mcc: real(8)?,
            best_epoch: int(9)? as usize,
            final_b: real(10)?,
            failure: None,
            e_ratio: Vec::new(),
        });
    }
    Ok(out)
}

/// Mean `log10` training e-ratio per epoch and method, averaged over the runs
/// that reached that epoch.
pub fn write_eratio_curves<W: Write>(results: &[RunResult], mut out: W) -> Result<()> {
    let groups = group_by_method(results);
    let epochs = results.iter().map(|r| r.e_ratio.len()).max().unwrap_or(0);
    let names: Vec<String> = groups.keys().map(|m| m.to_string()).collect();
    writeln!(out, "epoch,{}", names.join(","))?;
    for e in 0..epochs {
        let mut row = format!("{}", e + 1);
        for runs in groups.values() {
            let logs: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.e_ratio.get(e))
                .map(|v| v.max(f64::MIN_POSITIVE).log10())
                .collect();
            if logs.is_empty() {
                row.push(',');
            } else {
                let _ = write!(row, ",{}", logs.iter().sum::<f64>() / logs.len() as f64);
            }
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn cell(s: &MetricSummary) -> String {
    let mark = match s.mark {
        Mark::None => " ",
        Mark::Winner => "*",
        Mark::Tie => "=",
    };
    format!("{:.3} ({:.3}){mark}", s.mean, s.sd)
}

fn method_short(m: LossKind) -> &'static str {
    match m.variant {
        crate::losses::LossVariant::Bce => "BCE",
        crate::losses::LossVariant::Gmn => "GMN",
    }
}

/// Aligned text table with methods grouped by whether the asymmetric output
/// unit is used, and `mean (sd)` per cell.
pub fn render_table(report: &CvReport) -> String {
    let groups: Vec<(&str, Vec<&MethodSummary>)> = [(false, "Without ASTra"), (true, "With ASTra")]
        .into_iter()
        .map(|(astra, title)| {
            (
                title,
                report
                    .methods
                    .iter()
                    .filter(|s| s.method.use_astra == astra)
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let col = 16;
    let first = 8;
    let mut lines = vec![String::new(), String::new()];
    let _ = write!(lines[0], "{:first$}", "");
    let _ = write!(lines[1], "{:first$}", "Metric");
    for (title, ms) in &groups {
        let width = col * ms.len() + 2 * (ms.len() - 1);
        let _ = write!(lines[0], " | {title:^width$}");
        let names: Vec<String> = ms.iter().map(|s| format!("{:^col$}", method_short(s.method))).collect();
        let _ = write!(lines[1], " | {}", names.join("  "));
    }
    for metric in Metric::ALL {
        let mut row = format!("{:first$}", metric.label());
        for (_, ms) in &groups {
            let cells: Vec<String> = ms.iter().map(|s| format!("{:>col$}", cell(s.metric(metric)))).collect();
            let _ = write!(row, " | {}", cells.join("  "));
        }
        lines.push(row);
    }
    let rule = "-".repeat(lines.iter().map(|l| l.len()).max().unwrap_or(0));
    lines.insert(2, rule);
    lines.push(String::new());
    lines.push(format!(
        "* sole winner (p <= {ALPHA} against every competitor); = best or not separable from the best"
    ));
    let runs: BTreeSet<usize> = report.methods.iter().map(|s| s.runs).collect();
    let runs: Vec<String> = runs.iter().map(|r| r.to_string()).collect();
    lines.push(format!("runs per method: {}", runs.join(", ")));
    let mut text: String = lines.iter().map(|l| l.trim_end()).collect::<Vec<_>>().join("\n");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::seed;
    use rand_distr::{Distribution, Normal};

    fn fake(method: LossKind, repeat: usize, fold: usize, g: f64, m: f64) -> RunResult {
        RunResult {
            repeat,
            fold,
            method,
            test_cm: CountCM::default(),
            g_mean: g,
            mcc: m,
            best_epoch: 0,
            final_b: 1.0,
            failure: None,
            e_ratio: Vec::new(),
        }
    }

    fn results_from(cols: &[(LossKind, Vec<f64>)]) -> Vec<RunResult> {
        cols.iter()
            .flat_map(|(m, v)| v.iter().enumerate().map(move |(i, &x)| fake(*m, i / 5, i % 5, x, x)))
            .collect()
    }

    fn blobs(m0: usize, m1: usize, sep: f64, s: u64) -> Dataset {
        let mut rng = seed::rng(s);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..m0 + m1 {
            let c = if i < m0 { 0.0 } else { sep };
            rows.push(vec![c + n.sample(&mut rng), c + n.sample(&mut rng)]);
            y.push(u8::from(i >= m0));
        }
        Dataset::new(Matrix::from_rows(&rows).unwrap(), y).unwrap()
    }

    fn small_cfg(methods: Vec<LossKind>) -> CvConfig {
        CvConfig {
            repeats: 1,
            k: 5,
            methods,
            keep_positives: None,
            base_seed: 11,
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn mean_sd_examples() {
        let r = mean_sd(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.mean, 0.5);
        assert!((r.sd - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[0.7; 6]).unwrap().sd, 0.0);
        assert_eq!(mean_sd(&[0.3]).unwrap().sd, 0.0);
        assert!(mean_sd(&[]).is_err());
        // One fold dropping to zero inflates the spread.
        let mut v = vec![0.99; 50];
        v[7] = 0.0;
        assert!(mean_sd(&v).unwrap().sd > 0.1);
    }

    #[test]
    fn sole_winner() {
        let hi: Vec<f64> = (0..10).map(|i| 0.9 + 0.001 * i as f64).collect();
        let lo: Vec<f64> = (0..10).map(|i| 0.5 + 0.002 * i as f64).collect();
        let rep = build_report(&results_from(&[
            (LossKind::BCE, lo.clone()),
            (LossKind::GMN, hi),
            (LossKind::BCE_ASTRA, lo.iter().map(|v| v - 0.1).collect()),
        ]))
        .unwrap();
        for metric in Metric::ALL {
            assert_eq!(rep.flagged(metric), vec![LossKind::GMN]);
            assert_eq!(rep.summary(LossKind::GMN).unwrap().metric(metric).mark, Mark::Winner);
        }
    }

    #[test]
    fn four_way_tie() {
        // Noisy columns around the same level; no pair separates.
        let base = [0.9, 0.2, 0.8, 0.4, 0.7, 0.5, 0.95, 0.1, 0.6, 0.3];
        let cols: Vec<(LossKind, Vec<f64>)> = LossKind::ALL
            .iter()
            .enumerate()
            .map(|(k, &m)| (m, (0..10).map(|i| base[(i + 3 * k) % 10]).collect()))
            .collect();
        let rep = build_report(&results_from(&cols)).unwrap();
        assert_eq!(rep.flagged(Metric::GMean), LossKind::ALL.to_vec());
        assert!(rep.methods.iter().all(|s| s.g_mean.mark == Mark::Tie));
    }

    #[test]
    fn two_inseparable_leaders() {
        // Leaders A and B alternate; both beat C and D on all ten cells.
        let a = vec![0.90, 0.80, 0.91, 0.79, 0.92, 0.78, 0.93, 0.77, 0.94, 0.76];
        let b = vec![0.80, 0.90, 0.79, 0.91, 0.78, 0.92, 0.77, 0.93, 0.76, 0.945];
        let c: Vec<f64> = (0..10).map(|i| 0.40 + 0.01 * i as f64).collect();
        let d: Vec<f64> = (0..10).map(|i| 0.30 + 0.01 * i as f64).collect();
        // Hand-applied rule: B has the higher mean (0.8525 vs 0.85); A vs B has
        // W+ = W- so p = 1; both beat C and D with p = 2/1024.
        let cols = vec![
            (LossKind::GMN_ASTRA, a),
            (LossKind::BCE, b),
            (LossKind::GMN, c),
            (LossKind::BCE_ASTRA, d),
        ];
        let rep = build_report(&results_from(&cols)).unwrap();
        assert_eq!(rep.flagged(Metric::GMean), vec![LossKind::BCE, LossKind::GMN_ASTRA]);
        let p = rep
            .comparison(Metric::GMean, LossKind::BCE, LossKind::GMN)
            .unwrap()
            .p_value;
        assert!((p - 2.0 / 1024.0).abs() < 1e-15);
        // Input order does not matter.
        let mut rev = cols.clone();
        rev.reverse();
        assert_eq!(build_report(&results_from(&rev)).unwrap(), rep);
    }

    #[test]
    fn significant_but_against_the_leader() {
        // The leader has the best mean only through one huge cell; the other
        // method wins most cells, so the leader does not separate from it.
        let mut lead = vec![0.1; 20];
        lead[0] = 1.0;
        let mut other = vec![0.15; 20];
        other[0] = 0.0;
        let rep = build_report(&results_from(&[(LossKind::BCE, lead), (LossKind::GMN, other)])).unwrap();
        assert!(
            rep.comparison(Metric::GMean, LossKind::BCE, LossKind::GMN)
                .unwrap()
                .p_value
                <= ALPHA
        );
        assert_eq!(rep.flagged(Metric::GMean), vec![LossKind::BCE, LossKind::GMN]);
    }

    #[test]
    fn pairing_is_enforced() {
        let mut r = results_from(&[(LossKind::BCE, vec![0.5; 5]), (LossKind::GMN, vec![0.5; 5])]);
        r.pop();
        assert!(build_report(&r).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CvConfig::default().validate().is_ok());
        for bad in [
            CvConfig {
                repeats: 0,
                ..Default::default()
            },
            CvConfig {
                k: 2,
                ..Default::default()
            },
            CvConfig {
                methods: vec![],
                ..Default::default()
            },
            CvConfig {
                methods: vec![LossKind::BCE, LossKind::BCE],
                ..Default::default()
            },
            CvConfig {
                keep_positives: Some(0),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn cv_counts_and_reproducibility() {
        let ds = blobs(120, 10, 3.0, 1);
        let cfg = small_cfg(vec![LossKind::GMN_ASTRA, LossKind::BCE]);
        let a = run_cv(&ds, &cfg).unwrap();
        assert_eq!(a.len(), 10);
        for m in [LossKind::BCE, LossKind::GMN_ASTRA] {
            assert_eq!(a.iter().filter(|r| r.method == m).count(), 5);
        }
        assert_eq!(a[0].method, LossKind::BCE);
        for r in &a {
            assert!((g_mean(&r.test_cm).unwrap() - r.g_mean).abs() < 1e-12);
            assert!((mcc(&r.test_cm) - r.mcc).abs() < 1e-12);
            assert_eq!(r.test_cm.tp + r.test_cm.fn_, 2);
            assert_eq!(r.e_ratio.len(), 30);
        }
        assert_eq!(a, run_cv(&ds, &cfg).unwrap());
        let one = small_cfg(vec![LossKind::GMN]);
        assert_eq!(run_cv(&ds, &one).unwrap().len(), 5);
    }

    #[test]
    fn cv_undersamples_each_repeat() {
        let ds = blobs(100, 20, 3.0, 2);
        let cfg = CvConfig {
            repeats: 2,
            keep_positives: Some(5),
            ..small_cfg(vec![LossKind::BCE])
        };
        let runs = run_cv(&ds, &cfg).unwrap();
        assert_eq!(runs.len(), 10);
        assert!(runs.iter().all(|r| r.test_cm.tp + r.test_cm.fn_ == 1));
        let too_few = CvConfig {
            keep_positives: Some(4),
            ..cfg
        };
        assert!(run_cv(&ds, &too_few).is_err());
    }

    #[test]
    fn collapsed_predictor_scores_zero() {
        let ds = blobs(20, 1, 0.0, 3);
        let cm = collapsed_cm(&ds);
        assert_eq!((g_mean(&cm).unwrap(), mcc(&cm)), (0.0, 0.0));
    }

    #[test]
    fn runs_csv_round_trip() {
        let ds = blobs(60, 10, 2.0, 4);
        let runs = run_cv(&ds, &small_cfg(LossKind::ALL.to_vec())).unwrap();
        let mut buf = Vec::new();
        write_runs_csv(&runs, &mut buf).unwrap();
        let back = read_runs_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), runs.len());
        for (x, y) in runs.iter().zip(&back) {
            assert_eq!((x.key(), x.test_cm, x.best_epoch), (y.key(), y.test_cm, y.best_epoch));
            assert_eq!(x.g_mean.to_bits(), y.g_mean.to_bits());
            assert_eq!(x.mcc.to_bits(), y.mcc.to_bits());
            assert_eq!(x.final_b.to_bits(), y.final_b.to_bits());
        }
        assert_eq!(build_report(&runs).unwrap(), build_report(&back).unwrap());
        assert!(read_runs_csv("method,x\n".as_bytes()).is_err());
    }

    #[test]
    fn table_and_curves_render() {
        let ds = blobs(60, 10, 2.0, 5);
        let runs = run_cv(&ds, &small_cfg(LossKind::ALL.to_vec())).unwrap();
        let table = render_table(&build_report(&runs).unwrap());
        assert!(table.contains("Without ASTra") && table.contains("With ASTra"));
        assert!(table.contains("G-Mean") && table.contains("MCC"));
        let mut buf = Vec::new();
        write_eratio_curves(&runs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,bce,gmn,bce-astra,gmn-astra\n"));
        assert_eq!(text.lines().count(), 31);
    }
}
