//! Fixed-length full-batch training with an adaptive slope learning rate and
//! best-on-validation parameter extraction.
//!
//! Each epoch: soft-confusion telemetry on the training set, slope-rate
//! update from the training e-ratio, one parameter step, then validation
//! `FNR_apx` on the updated model. There is no early stopping.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::activation::{AstraParams, THRESHOLD_FLOOR};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{approx_cm, e_ratio, fnr_apx, rates};
use crate::network::{hidden_units, InitScheme, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Adam rate for the weights.
    pub eta: f64,
    /// Floor and starting value of the slope learning rate.
    pub eta_b_min: f64,
    pub eta_b_max: f64,
    pub k_mult: f64,
    pub k_dec: f64,
    pub tau_init: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Overrides the `ceil((n_x + 1) / 2)` hidden-layer rule.
    pub hidden: Option<usize>,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10_000,
            eta: 0.001,
            eta_b_min: 0.01,
            eta_b_max: 0.5,
            k_mult: 1.1,
            k_dec: 0.99,
            tau_init: 0.25,
            loss: LossKind::BCE,
            seed: 0,
            hidden: None,
            init: InitScheme::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be a non-negative number, got {}", self.eta));
        }
        if !(self.eta_b_min > 0.0 && self.eta_b_min <= self.eta_b_max && self.eta_b_max.is_finite()) {
            return bad(format!(
                "need 0 < eta_b_min <= eta_b_max, got {} and {}",
                self.eta_b_min, self.eta_b_max
            ));
        }
        if !(self.k_mult > 1.0 && self.k_mult.is_finite()) {
            return bad(format!("k_mult must exceed 1, got {}", self.k_mult));
        }
        if !(self.k_dec > 0.0 && self.k_dec < 1.0) {
            return bad(format!("k_dec must lie in (0, 1), got {}", self.k_dec));
        }
        if !(self.tau_init > THRESHOLD_FLOOR && self.tau_init <= 0.5) {
            return bad(format!(
                "tau_init must lie in ({THRESHOLD_FLOOR}, 0.5], got {}",
                self.tau_init
            ));
        }
        if self.hidden == Some(0) {
            return bad("hidden layer needs at least one unit".into());
        }
        Ok(())
    }

    pub fn hidden_for(&self, n_x: usize) -> usize {
        self.hidden.unwrap_or_else(|| hidden_units(n_x))
    }

    /// Freshly initialised network for `n_x` inputs.
    pub fn build_model(&self, n_x: usize) -> Result<Mlp> {
        let astra = if self.loss.use_astra {
            Some(AstraParams::from_threshold(self.tau_init, self.eta_b_min)?)
        } else {
            None
        };
        Mlp::with_init(n_x, self.hidden_for(n_x), self.seed, self.init, astra)
    }
}

/// Speeds the slope rate up while positives are the harder class and slows
/// it down otherwise, within `[eta_b_min, eta_b_max]`.
pub fn eta_b_update(eta_b: f64, e_ratio: f64, cfg: &TrainConfig) -> f64 {
    if e_ratio > 1.0 {
        (cfg.k_mult * eta_b).min(cfg.eta_b_max)
    } else if e_ratio < 1.0 {
        (cfg.k_dec * eta_b).max(cfg.eta_b_min)
    } else {
        eta_b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_e_ratio: f64,
    pub train_fnr_apx: f64,
    pub train_fpr_apx: f64,
    pub val_fnr_apx: f64,
    pub b: f64,
    pub tau: f64,
    pub eta_b: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_e_ratio,train_fnr_apx,train_fpr_apx,val_fnr_apx,b,tau,eta_b";

pub fn write_epoch_csv<W: Write>(records: &[EpochRecord], mut out: W) -> Result<()> {
    writeln!(out, "{EPOCH_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            r.train_e_ratio,
            r.train_fnr_apx,
            r.train_fpr_apx,
            r.val_fnr_apx,
            r.b,
            r.tau,
            r.eta_b
        )?;
    }
    Ok(())
}

/// Best-on-validation model.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// 0 for the initial model.
    pub epoch: usize,
    pub model: Mlp,
    pub val_fnr_apx: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub snapshot: Snapshot,
    pub records: Vec<EpochRecord>,
    /// Set when training stopped early on a non-finite value; the snapshot
    /// is then the last good one.
    pub failure: Option<String>,
}

fn val_fnr(model: &Mlp, val: &Dataset) -> Result<f64> {
    let z = model.predict_z(val.x())?;
    fnr_apx(&approx_cm(&z, val.y())?)
}

pub fn train(cfg: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.positives() == 0 {
        return Err(Error::EmptyClass("positive"));
    }
    if train_set.negatives() == 0 {
        return Err(Error::EmptyClass("negative"));
    }
    if val_set.positives() == 0 {
        return Err(Error::EmptyClass("positive"));
    }
    if val_set.n_features() != train_set.n_features() {
        return Err(Error::Shape {
            expected: train_set.n_features(),
            found: val_set.n_features(),
        });
    }

    let mut model = cfg.build_model(train_set.n_features())?;
    let mut snapshot = Snapshot {
        epoch: 0,
        val_fnr_apx: val_fnr(&model, val_set)?,
        model: model.clone(),
    };
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut eta_b = cfg.eta_b_min;
    let mut failure = None;
    let y = train_set.y();

    for epoch in 1..=cfg.epochs {
        let trace = model.forward(train_set.x())?;
        let cm = approx_cm(&trace.z, y)?;
        let r = rates(&cm)?;
        let e = e_ratio(&cm)?;
        if let Some(a) = model.astra_mut() {
            eta_b = eta_b_update(eta_b, e, cfg);
            a.set_eta_b(eta_b);
        }
        let loss = match model.backward_and_step(&trace, y, cfg.loss, cfg.eta, eta_b) {
            Ok((loss, _)) => loss,
            Err(Error::NonFinite { what, .. }) => {
                failure = Some(format!("non-finite {what} at epoch {epoch}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let val = val_fnr(&model, val_set)?;
        if !val.is_finite() {
            failure = Some(format!("non-finite validation FNR_apx at epoch {epoch}"));
            break;
        }
        records.push(EpochRecord {
            epoch,
            train_loss: loss,
            train_e_ratio: e,
            train_fnr_apx: r.fnr,
            train_fpr_apx: r.fpr,
            val_fnr_apx: val,
            b: model.slope(),
            tau: model.threshold(),
            eta_b,
        });
        if val < snapshot.val_fnr_apx {
            snapshot = Snapshot {
                epoch,
                model: model.clone(),
                val_fnr_apx: val,
            };
        }
    }

    Ok(TrainOutcome {
        snapshot,
        records,
        failure,
    })
}
