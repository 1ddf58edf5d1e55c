//! Counting and approximated confusion matrices and the statistics derived
//! from them.
//!
//! Rows are targets and columns predictions, so `tn`/`fp` partition the
//! negatives and `fn`/`tp` the positives. Every statistic is written once
//! against [`Confusion`] and therefore applies to both matrix kinds.

use serde::{Deserialize, Serialize};

use crate::error::{check_lengths, Error, Result};

/// Floor for the false positive rate in [`e_ratio`].
pub const E_RATIO_EPS: f64 = 1e-12;

pub trait Confusion {
    fn tn(&self) -> f64;
    fn fp(&self) -> f64;
    fn fn_(&self) -> f64;
    fn tp(&self) -> f64;

    fn negatives(&self) -> f64 {
        self.tn() + self.fp()
    }

    fn positives(&self) -> f64 {
        self.fn_() + self.tp()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCM {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl Confusion for CountCM {
    fn tn(&self) -> f64 {
        self.tn as f64
    }
    fn fp(&self) -> f64 {
        self.fp as f64
    }
    fn fn_(&self) -> f64 {
        self.fn_ as f64
    }
    fn tp(&self) -> f64 {
        self.tp as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproxCM {
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tp: f64,
}

impl Confusion for ApproxCM {
    fn tn(&self) -> f64 {
        self.tn
    }
    fn fp(&self) -> f64 {
        self.fp
    }
    fn fn_(&self) -> f64 {
        self.fn_
    }
    fn tp(&self) -> f64 {
        self.tp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fnr: f64,
}

pub(crate) fn check_labels(y: &[u8]) -> Result<()> {
    match y.iter().position(|&l| l > 1) {
        Some(i) => Err(Error::domain(format!("label {} at index {i} is not 0 or 1", y[i]))),
        None => Ok(()),
    }
}

pub fn counting_cm(pred: &[u8], y: &[u8]) -> Result<CountCM> {
    if pred.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: y.len(),
        });
    }
    check_labels(pred)?;
    check_labels(y)?;
    let mut cm = CountCM::default();
    for (&p, &t) in pred.iter().zip(y) {
        match (t, p) {
            (0, 0) => cm.tn += 1,
            (0, _) => cm.fp += 1,
            (_, 0) => cm.fn_ += 1,
            _ => cm.tp += 1,
        }
    }
    Ok(cm)
}

/// Soft confusion matrix: each example contributes its output mass to the
/// predicted-positive column and the remainder to the predicted-negative one.
pub fn approx_cm(y_hat: &[f64], y: &[u8]) -> Result<ApproxCM> {
    check_lengths(y_hat.len(), y.len())?;
    check_labels(y)?;
    Ok(approx_cm_unchecked(y_hat, y))
}

pub(crate) fn approx_cm_unchecked(y_hat: &[f64], y: &[u8]) -> ApproxCM {
    let mut cm = ApproxCM::default();
    // Per-class counts are accumulated as (1 - p) + p so that row sums match
    // the class sizes to rounding.
    for (&p, &t) in y_hat.iter().zip(y) {
        if t == 1 {
            cm.tp += p;
            cm.fn_ += 1.0 - p;
        } else {
            cm.fp += p;
            cm.tn += 1.0 - p;
        }
    }
    cm
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc<C: Confusion>(cm: &C) -> f64 {
    let (tn, fp, fn_, tp) = (cm.tn(), cm.fp(), cm.fn_(), cm.tp());
    let mut factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.contains(&0.0) {
        return 0.0;
    }
    // Canonical order makes the denominator independent of which label is
    // called positive.
    factors.sort_by(f64::total_cmp);
    let den = factors.iter().product::<f64>().sqrt();
    ((tp * tn - fp * fn_) / den).clamp(-1.0, 1.0)
}

pub fn rates<C: Confusion>(cm: &C) -> Result<Rates> {
    let pos = cm.positives();
    let neg = cm.negatives();
    if pos.is_nan() || pos <= 0.0 {
        return Err(Error::EmptyClass("positive"));
    }
    if neg.is_nan() || neg <= 0.0 {
        return Err(Error::EmptyClass("negative"));
    }
    Ok(Rates {
        tpr: cm.tp() / pos,
        tnr: cm.tn() / neg,
        fpr: cm.fp() / neg,
        fnr: cm.fn_() / pos,
    })
}

pub fn g_mean<C: Confusion>(cm: &C) -> Result<f64> {
    let r = rates(cm)?;
    Ok((r.tpr * r.tnr).sqrt())
}

/// False negative rate of an approximated matrix; needs positives only.
pub fn fnr_apx(cm: &ApproxCM) -> Result<f64> {
    let pos = cm.positives();
    if pos.is_nan() || pos <= 0.0 {
        return Err(Error::EmptyClass("positive"));
    }
    Ok(cm.fn_ / pos)
}

/// How much harder positives are than negatives: `FNR_apx / FPR_apx`, with
/// the denominator floored at [`E_RATIO_EPS`].
pub fn e_ratio(cm: &ApproxCM) -> Result<f64> {
    let r = rates(cm)?;
    Ok(r.fnr / r.fpr.max(E_RATIO_EPS))
}
