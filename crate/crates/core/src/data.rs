//! Dataset ingestion, label orientation, scaling, fold planning and minority
//! undersampling.
//!
//! The sparse text format is one example per line:
//!
//! ```text
//! <label> <index>:<value> <index>:<value> ...
//! ```
//!
//! with strictly ascending 1-based indices. Omitted features read as zero and
//! anything after `#` is ignored.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Features with the raw labels as they appear in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub x: Matrix,
    pub labels: Vec<f64>,
}

/// Raw label values behind targets 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub negative: f64,
    pub positive: f64,
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap {
            negative: 0.0,
            positive: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Vec<u8>,
    m0: usize,
    m1: usize,
    labels: LabelMap,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<u8>) -> Result<Self> {
        Self::with_labels(x, y, LabelMap::default())
    }

    pub fn with_labels(x: Matrix, y: Vec<u8>, labels: LabelMap) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.rows(),
                right: y.len(),
            });
        }
        crate::metrics::check_labels(&y)?;
        let m1 = y.iter().filter(|&&l| l == 1).count();
        Ok(Dataset {
            m0: y.len() - m1,
            m1,
            x,
            y,
            labels,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn negatives(&self) -> usize {
        self.m0
    }

    pub fn positives(&self) -> usize {
        self.m1
    }

    /// Imbalance ratio `m0 / m1`; infinite without positives.
    pub fn imbalance_ratio(&self) -> f64 {
        self.m0 as f64 / self.m1 as f64
    }

    pub fn labels(&self) -> LabelMap {
        self.labels
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let y: Vec<u8> = idx.iter().map(|&i| self.y[i]).collect();
        let m1 = y.iter().filter(|&&l| l == 1).count();
        Dataset {
            x: self.x.select_rows(idx),
            m0: y.len() - m1,
            m1,
            y,
            labels: self.labels,
        }
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i] == 1).collect()
    }

    pub fn negative_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i] == 0).collect()
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn parse_number(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("cannot parse {what} '{tok}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{what} '{tok}' is not finite")));
    }
    Ok(v)
}

/// Reads the sparse `label index:value ...` format into a dense matrix whose
/// width is the largest index seen.
pub fn parse_sparse<R: BufRead>(reader: R) -> Result<RawDataset> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut width = 0usize;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let body = strip_comment(&line).trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label = parse_number(tokens.next().unwrap_or_default(), line_no, "label")?;
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(line_no, format!("expected index:value, got '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(line_no, format!("cannot parse index '{idx}'")))?;
            if idx == 0 {
                return Err(Error::parse(line_no, "feature indices are 1-based"));
            }
            if idx <= last {
                return Err(Error::parse(
                    line_no,
                    format!("index {idx} does not ascend past {last}"),
                ));
            }
            last = idx;
            row.push((idx, parse_number(val, line_no, "value")?));
        }
        width = width.max(last);
        labels.push(label);
        rows.push(row);
    }
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    let mut x = Matrix::zeros(rows.len(), width);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            x.set(i, j - 1, v);
        }
    }
    Ok(RawDataset { x, labels })
}

/// Reads `label,f1,...,fn` rows. A first line whose label field is not numeric
/// is taken as a header.
pub fn parse_csv<R: BufRead>(reader: R) -> Result<RawDataset> {
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split(',').map(str::trim).collect();
        if labels.is_empty() && width.is_none() && fields[0].parse::<f64>().is_err() {
            width = Some(fields.len() - 1);
            continue;
        }
        let w = *width.get_or_insert(fields.len() - 1);
        if fields.len() - 1 != w {
            return Err(Error::parse(
                line_no,
                format!("expected {} features, found {}", w, fields.len() - 1),
            ));
        }
        labels.push(parse_number(fields[0], line_no, "label")?);
        for f in &fields[1..] {
            data.push(parse_number(f, line_no, "value")?);
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    let x = Matrix::new(labels.len(), width.unwrap_or(0), data)?;
    Ok(RawDataset { x, labels })
}

/// Writes a dataset in the sparse format using its raw labels. Zeros are
/// omitted; values use shortest round-trip formatting.
pub fn write_sparse<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    let labels = ds.labels();
    for i in 0..ds.len() {
        let label = if ds.y()[i] == 1 {
            labels.positive
        } else {
            labels.negative
        };
        write!(out, "{label}")?;
        for (j, &v) in ds.x().row(i).iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Maps the rarer raw label to target 1 and the commoner to 0. Equal counts
/// send the numerically larger label to 1.
pub fn orient_labels(raw: RawDataset) -> Result<Dataset> {
    let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for &l in &raw.labels {
        // Normalise -0.0 so both zeros count as one label.
        let l = if l == 0.0 { 0.0 } else { l };
        counts.entry(l.to_bits()).or_insert((l, 0)).1 += 1;
    }
    if counts.len() != 2 {
        return Err(Error::domain(format!(
            "expected exactly two distinct labels, found {}",
            counts.len()
        )));
    }
    let mut it = counts.into_values();
    let (a, b) = (it.next().unwrap(), it.next().unwrap());
    let (lo, hi) = if a.0 < b.0 { (a, b) } else { (b, a) };
    let (positive, negative) = if lo.1 < hi.1 { (lo.0, hi.0) } else { (hi.0, lo.0) };
    let y = raw.labels.iter().map(|&l| u8::from(l == positive)).collect();
    Dataset::with_labels(raw.x, y, LabelMap { negative, positive })
}

/// Reads a held-out set against the label map and width of a training set.
/// Sparse files may omit trailing all-zero columns, so narrower inputs are
/// zero-padded; wider ones are rejected.
pub fn align_to(raw: RawDataset, labels: LabelMap, n_features: usize) -> Result<Dataset> {
    let y = raw
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l == labels.positive {
                Ok(1)
            } else if l == labels.negative {
                Ok(0)
            } else {
                Err(Error::parse(i + 1, format!("label {l} not seen in the training set")))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    let width = raw.x.cols();
    if width > n_features {
        return Err(Error::Shape {
            expected: n_features,
            found: width,
        });
    }
    let mut x = Matrix::zeros(raw.x.rows(), n_features);
    for i in 0..raw.x.rows() {
        x.row_mut(i)[..width].copy_from_slice(raw.x.row(i));
    }
    Dataset::with_labels(x, y, labels)
}

/// Per-feature affine transform fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation of each column. Constant
    /// columns get unit scale so they are only centred.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Empty);
        }
        let n = ds.len() as f64;
        let cols = ds.n_features();
        let mut mean = vec![0.0; cols];
        for i in 0..ds.len() {
            for (m, v) in mean.iter_mut().zip(ds.x().row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for i in 0..ds.len() {
            for ((s, v), m) in var.iter_mut().zip(ds.x().row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                if sd <= 1e-12 * m.abs().max(1.0) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_features() != self.mean.len() {
            return Err(Error::Shape {
                expected: self.mean.len(),
                found: ds.n_features(),
            });
        }
        let mut out = ds.clone();
        for i in 0..out.len() {
            for ((v, m), s) in out.x.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Scales `train` and every set in `others` with statistics from `train` alone.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, Scaler)> {
    let scaler = Scaler::fit(train)?;
    let scaled_train = scaler.apply(train)?;
    let scaled = others.iter().map(|d| scaler.apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((scaled_train, scaled, scaler))
}

/// Per-example fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

/// Index sets of one rotation of a fold plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    pub fn fold(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == f)
            .collect()
    }

    /// Rotation `r` tests on fold `r mod k`, validates on `(r + 1) mod k` and
    /// trains on the rest.
    pub fn split(&self, rotation: usize) -> Split {
        let test_fold = rotation % self.k;
        let val_fold = (rotation + 1) % self.k;
        let mut split = Split {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == test_fold {
                split.test.push(i);
            } else if f == val_fold {
                split.val.push(i);
            } else {
                split.train.push(i);
            }
        }
        split
    }
}

/// Shuffles each class independently and deals it round-robin into `k`
/// folds. Negatives continue the deal where positives stopped so fold totals
/// also differ by at most one.
pub fn stratified_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if ds.len() < k {
        return Err(Error::Config(format!("{} examples cannot fill {k} folds", ds.len())));
    }
    if ds.positives() == 0 {
        return Err(Error::EmptyClass("positive"));
    }
    let mut rng = seed::rng(seed);
    let mut pos = ds.positive_indices();
    let mut neg = ds.negative_indices();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignments = vec![0; ds.len()];
    for (slot, &i) in pos.iter().chain(&neg).enumerate() {
        assignments[i] = slot % k;
    }
    Ok(FoldPlan { k, assignments })
}

/// Keeps every negative and a seeded uniform sample of `keep` positives, in
/// original row order. Returns the retained positives' original indices too.
pub fn undersample_minority(ds: &Dataset, keep: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if keep == 0 || keep > ds.positives() {
        return Err(Error::Config(format!(
            "keep must lie in 1..={}, got {keep}",
            ds.positives()
        )));
    }
    let pos = ds.positive_indices();
    let mut chosen: Vec<usize> = index::sample(&mut seed::rng(seed), pos.len(), keep)
        .into_iter()
        .map(|j| pos[j])
        .collect();
    chosen.sort_unstable();
    let rows: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.y()[i] == 0 || chosen.binary_search(&i).is_ok())
        .collect();
    Ok((ds.subset(&rows), chosen))
}
