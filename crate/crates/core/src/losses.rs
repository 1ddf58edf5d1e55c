//! Training losses and their gradients with respect to the network outputs.
//!
//! Both losses consume the threshold-corrected output `z` when the asymmetric
//! unit is active (and the plain output otherwise). Cross-entropy is averaged
//! over examples; the G-Mean loss is a set-level quantity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::clamp_output;
use crate::error::{check_lengths, Error, Result};
use crate::metrics::{check_labels, Confusion};

pub use crate::metrics::approx_cm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Bce,
    Gmn,
}

/// One of the four training candidates. Ordering follows the report table:
/// without the asymmetric unit first, cross-entropy before G-Mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LossKind {
    pub use_astra: bool,
    pub variant: LossVariant,
}

impl LossKind {
    pub const BCE: LossKind = LossKind::new(LossVariant::Bce, false);
    pub const GMN: LossKind = LossKind::new(LossVariant::Gmn, false);
    pub const BCE_ASTRA: LossKind = LossKind::new(LossVariant::Bce, true);
    pub const GMN_ASTRA: LossKind = LossKind::new(LossVariant::Gmn, true);

    pub const ALL: [LossKind; 4] = [Self::BCE, Self::GMN, Self::BCE_ASTRA, Self::GMN_ASTRA];

    pub const fn new(variant: LossVariant, use_astra: bool) -> Self {
        LossKind { variant, use_astra }
    }

    /// Loss value and `dJ/dz` for outputs `z` that are already clamped.
    pub(crate) fn value_and_grad(&self, z: &[f64], y: &[u8]) -> Result<(f64, Vec<f64>)> {
        match self.variant {
            LossVariant::Bce => Ok((bce_loss(z, y)?, bce_grad(z, y)?)),
            LossVariant::Gmn => {
                let (m0, m1) = class_counts(y);
                Ok((gmn_loss(z, y, m0, m1)?, gmn_grad(z, y, m0, m1)?))
            }
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.variant {
            LossVariant::Bce => "bce",
            LossVariant::Gmn => "gmn",
        };
        if self.use_astra {
            write!(f, "{base}-astra")
        } else {
            f.write_str(base)
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(Self::BCE),
            "gmn" => Ok(Self::GMN),
            "bce-astra" => Ok(Self::BCE_ASTRA),
            "gmn-astra" => Ok(Self::GMN_ASTRA),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl Serialize for LossKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) fn class_counts(y: &[u8]) -> (usize, usize) {
    let m1 = y.iter().filter(|&&l| l == 1).count();
    (y.len() - m1, m1)
}

/// Mean binary cross-entropy; `z` is clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(z: &[f64], y: &[u8]) -> Result<f64> {
    check_lengths(z.len(), y.len())?;
    check_labels(y)?;
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = clamp_output(p);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / z.len() as f64)
}

/// Per-example `dJ/dz` of [`bce_loss`] at the clamped outputs.
pub fn bce_grad(z: &[f64], y: &[u8]) -> Result<Vec<f64>> {
    check_lengths(z.len(), y.len())?;
    check_labels(y)?;
    let n = z.len() as f64;
    Ok(z.iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = clamp_output(p);
            if t == 1 {
                -1.0 / (p * n)
            } else {
                1.0 / ((1.0 - p) * n)
            }
        })
        .collect())
}

fn soft_matrix(y_hat: &[f64], y: &[u8], m0: usize, m1: usize) -> Result<crate::metrics::ApproxCM> {
    check_lengths(y_hat.len(), y.len())?;
    check_labels(y)?;
    if m0 == 0 {
        return Err(Error::EmptyClass("negative"));
    }
    if m1 == 0 {
        return Err(Error::EmptyClass("positive"));
    }
    let (n0, n1) = class_counts(y);
    if (n0, n1) != (m0, m1) {
        return Err(Error::domain(format!(
            "class sizes ({m0}, {m1}) do not match targets ({n0}, {n1})"
        )));
    }
    if let Some(p) = y_hat.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!("output {p} outside [0, 1]")));
    }
    approx_cm(y_hat, y)
}

/// Approximated G-Mean from the soft matrix, `sqrt(TP/m1 · TN/m0)`.
fn soft_g_mean(cm: &crate::metrics::ApproxCM, m0: usize, m1: usize) -> f64 {
    ((cm.tp() / m1 as f64) * (cm.tn() / m0 as f64)).sqrt()
}

/// `1 - G-Mean_apx`. Outputs are used as given (they must lie in `[0, 1]`), so
/// binary predictions reproduce `1 - G-Mean` of the counting matrix exactly.
pub fn gmn_loss(y_hat: &[f64], y: &[u8], m0: usize, m1: usize) -> Result<f64> {
    let cm = soft_matrix(y_hat, y, m0, m1)?;
    Ok(1.0 - soft_g_mean(&cm, m0, m1))
}

/// `dJ/dy_hat_i = -G/2 · (y_i/TP - (1 - y_i)/TN)`. Requires `TP·TN > 0`,
/// which clamped outputs always satisfy.
pub fn gmn_grad(y_hat: &[f64], y: &[u8], m0: usize, m1: usize) -> Result<Vec<f64>> {
    let cm = soft_matrix(y_hat, y, m0, m1)?;
    if !(cm.tp > 0.0 && cm.tn > 0.0) {
        return Err(Error::domain("G-Mean gradient is singular when TP_apx or TN_apx is 0"));
    }
    let half_g = 0.5 * soft_g_mean(&cm, m0, m1);
    let pos = -half_g / cm.tp;
    let neg = half_g / cm.tn;
    Ok(y.iter().map(|&t| if t == 1 { pos } else { neg }).collect())
}
