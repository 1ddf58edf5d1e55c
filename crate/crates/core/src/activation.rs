//! The asymmetric sigmoid output unit.
//!
//! `astra(x, b) = 1 - (1 + b·e^{bx})^{-1/b}` reduces to the logistic function at
//! `b = 1` and places its steepest point (the decision threshold) at `x = 0`,
//! where the output equals `threshold(b) = 1 - (1 + b)^{-1/b} <= 0.5`.
//!
//! Everything is evaluated through `t = ln(b·e^{bx}) = bx + ln b` so that no
//! intermediate overflows for large `|bx|`.

use crate::error::{Error, Result};

/// Outputs are clamped to `[OUTPUT_EPS, 1 - OUTPUT_EPS]` before any logarithm.
pub const OUTPUT_EPS: f64 = 1e-7;

/// Lowest threshold the slope may reach during learning.
pub const THRESHOLD_FLOOR: f64 = 0.05;

/// Slope at which `threshold(b) == THRESHOLD_FLOOR`.
pub const SLOPE_MAX: f64 = 87.370_935_903_440_08;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 35.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn check_slope(b: f64) -> Result<()> {
    if !(b.is_finite() && b >= 1.0) {
        return Err(Error::domain(format!("slope must be finite and >= 1, got {b}")));
    }
    Ok(())
}

fn check_input(x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::domain(format!("preactivation must be finite, got {x}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn forward_unchecked(x: f64, b: f64) -> f64 {
    if x == 0.0 {
        // e^{ln b} can miss b by an ulp; pin the boundary to the threshold.
        return threshold_unchecked(b);
    }
    let log_u = b * x + b.ln();
    -(-softplus(log_u) / b).exp_m1()
}

#[inline]
pub(crate) fn backward_unchecked(x: f64, b: f64) -> (f64, f64) {
    let log_u = b * x + b.ln();
    let l = softplus(log_u);
    let s = (-l / b).exp();
    let frac = logistic(log_u);
    let dy_dx = s * frac;
    let dy_db = s * (frac * (1.0 / b + x) / b - l / (b * b));
    (dy_dx, dy_db)
}

#[inline]
pub(crate) fn threshold_unchecked(b: f64) -> f64 {
    -(-b.ln_1p() / b).exp_m1()
}

/// `d threshold / db`.
#[inline]
pub(crate) fn threshold_derivative(b: f64) -> f64 {
    let s = (-b.ln_1p() / b).exp();
    s * (1.0 / (b * (1.0 + b)) - b.ln_1p() / (b * b))
}

/// Asymmetric sigmoid of preactivation `x` with slope `b >= 1`.
pub fn astra_forward(x: f64, b: f64) -> Result<f64> {
    check_slope(b)?;
    check_input(x)?;
    Ok(forward_unchecked(x, b))
}

/// Partial derivatives `(dy/dx, dy/db)` of [`astra_forward`].
pub fn astra_backward(x: f64, b: f64) -> Result<(f64, f64)> {
    check_slope(b)?;
    check_input(x)?;
    Ok(backward_unchecked(x, b))
}

/// Output value at zero preactivation; the decision threshold.
pub fn astra_threshold(b: f64) -> Result<f64> {
    check_slope(b)?;
    Ok(threshold_unchecked(b))
}

/// Maps the unconstrained parameter onto a slope `> 1`: linear above zero,
/// exponential approach to 1 below.
pub fn slope_from_beta(beta: f64) -> f64 {
    if beta > 0.0 {
        2.0 + beta
    } else {
        1.0 + beta.exp()
    }
}

/// `db/dbeta`.
pub fn slope_derivative(beta: f64) -> f64 {
    if beta > 0.0 {
        1.0
    } else {
        beta.exp()
    }
}

/// Inverse of [`slope_from_beta`]. A slope of exactly 1 maps to `-inf`.
pub fn beta_from_slope(b: f64) -> Result<f64> {
    check_slope(b)?;
    Ok(if b > 2.0 { b - 2.0 } else { (b - 1.0).ln() })
}

/// Slope whose threshold equals `tau`, by bisection on the decreasing map.
pub fn slope_from_threshold(tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 0.5) {
        return Err(Error::domain(format!("threshold must lie in (0, 0.5], got {tau}")));
    }
    if tau == 0.5 {
        return Ok(1.0);
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    while threshold_unchecked(hi) > tau {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if threshold_unchecked(mid) > tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::domain(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp_output(y: f64) -> f64 {
    y.clamp(OUTPUT_EPS, 1.0 - OUTPUT_EPS)
}

#[inline]
pub(crate) fn z_unchecked(y_hat: f64, tau: f64) -> f64 {
    if tau == 0.5 {
        return y_hat;
    }
    let num = y_hat * (1.0 - tau);
    num / (num + (1.0 - y_hat) * tau)
}

#[inline]
pub(crate) fn z_backward_unchecked(y_hat: f64, tau: f64) -> (f64, f64) {
    let den = y_hat * (1.0 - tau) + (1.0 - y_hat) * tau;
    let den2 = den * den;
    (tau * (1.0 - tau) / den2, -y_hat * (1.0 - y_hat) / den2)
}

/// Remaps an output so that the threshold `tau` lands on 0.5. The input is
/// clamped to `[OUTPUT_EPS, 1 - OUTPUT_EPS]` first; `tau == 0.5` is the identity.
pub fn z_transform(y_hat: f64, tau: f64) -> Result<f64> {
    check_unit("threshold", tau)?;
    if y_hat.is_nan() {
        return Err(Error::domain("output is NaN"));
    }
    Ok(z_unchecked(clamp_output(y_hat), tau))
}

/// Partial derivatives `(dz/dy_hat, dz/dtau)` of [`z_transform`], evaluated at
/// the clamped output.
pub fn z_transform_backward(y_hat: f64, tau: f64) -> Result<(f64, f64)> {
    check_unit("threshold", tau)?;
    if y_hat.is_nan() {
        return Err(Error::domain("output is NaN"));
    }
    Ok(z_backward_unchecked(clamp_output(y_hat), tau))
}

/// Upper end of the preactivation interval `(0, x_max)` on which
/// cross-entropy on the raw output ranks targets 0 and 1 the wrong way round.
pub fn misorder_band_upper(b: f64) -> Result<f64> {
    if !(b.is_finite() && b > 1.0) {
        return Err(Error::domain(format!("slope must be finite and > 1, got {b}")));
    }
    // (2^b - 1) / b written as expm1(b ln 2) / b keeps precision near b = 1.
    Ok(((b * std::f64::consts::LN_2).exp_m1() / b).ln() / b)
}

/// Learnable slope state of the output unit plus its learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AstraParams {
    beta: f64,
    b: f64,
    tau: f64,
    eta_b: f64,
}

impl AstraParams {
    pub fn from_beta(beta: f64, eta_b: f64) -> Result<Self> {
        if beta.is_nan() || beta == f64::INFINITY {
            return Err(Error::domain(format!("beta must not be NaN or +inf, got {beta}")));
        }
        if eta_b.is_nan() || eta_b <= 0.0 {
            return Err(Error::domain(format!("eta_b must be positive, got {eta_b}")));
        }
        let mut params = AstraParams {
            beta,
            b: 1.0,
            tau: 0.5,
            eta_b,
        };
        params.set_beta(beta);
        Ok(params)
    }

    /// Starts the slope at the value whose threshold is `tau_init`.
    pub fn from_threshold(tau_init: f64, eta_b: f64) -> Result<Self> {
        let b = slope_from_threshold(tau_init)?;
        Self::from_beta(beta_from_slope(b)?, eta_b)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn slope(&self) -> f64 {
        self.b
    }

    pub fn threshold(&self) -> f64 {
        self.tau
    }

    pub fn eta_b(&self) -> f64 {
        self.eta_b
    }

    pub fn set_eta_b(&mut self, eta_b: f64) {
        self.eta_b = eta_b;
    }

    /// Sets beta, re-deriving slope and threshold; slopes above [`SLOPE_MAX`] are
    /// pulled back so the threshold never drops below [`THRESHOLD_FLOOR`].
    pub fn set_beta(&mut self, beta: f64) {
        let mut beta = beta;
        if slope_from_beta(beta) > SLOPE_MAX {
            beta = SLOPE_MAX - 2.0;
        }
        self.beta = beta;
        self.b = slope_from_beta(beta);
        self.tau = threshold_unchecked(self.b);
    }

    /// One plain gradient step on beta.
    pub fn step(&mut self, grad_beta: f64, rate: f64) {
        self.set_beta(self.beta - rate * grad_beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, at: f64, h: f64) -> f64 {
        (f(at + h) - f(at - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn forward_examples() {
        assert_eq!(astra_forward(0.0, 1.0).unwrap(), 0.5);
        assert!((astra_forward(0.0, 7.396).unwrap() - 0.25).abs() < 5e-4);
        let hi = astra_forward(40.0, 7.396).unwrap();
        assert!((hi - 1.0).abs() < 1e-12);
        let lo = astra_forward(-40.0, 7.396).unwrap();
        assert!(lo > 0.0 && lo < 1e-12, "{lo}");
        // e^{bx} leading term; b·e^{bx}/b
        assert!(rel_err(lo, (-40.0f64 * 7.396).exp()) < 1e-10);
    }

    #[test]
    fn forward_rejects_bad_domain() {
        assert!(astra_forward(0.0, 0.99).is_err());
        assert!(astra_forward(f64::NAN, 2.0).is_err());
        assert!(astra_forward(f64::INFINITY, 2.0).is_err());
        assert!(astra_threshold(0.5).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(astra_threshold(1.0).unwrap(), 0.5);
        assert!((astra_threshold(7.396).unwrap() - 0.25).abs() < 5e-4);
        assert!((astra_threshold(2.0).unwrap() - (1.0 - 3f64.powf(-0.5))).abs() < 1e-15);
        assert!((astra_threshold(SLOPE_MAX).unwrap() - THRESHOLD_FLOOR).abs() < 1e-12);
    }

    #[test]
    fn slope_parameterisation() {
        assert_eq!(slope_from_beta(0.0), 2.0);
        assert!((slope_from_beta(5.396) - 7.396).abs() < 1e-12);
        assert!((slope_from_beta(-20.0) - (1.0 + (-20f64).exp())).abs() < 1e-15);
        assert!(slope_from_beta(-20.0) > 1.0);
        for beta in [-3.0, -0.5, 0.0, 0.25, 4.0] {
            let b = slope_from_beta(beta);
            assert!((beta_from_slope(b).unwrap() - beta).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_threshold_gives_reference_slope() {
        let p = AstraParams::from_threshold(0.25, 0.01).unwrap();
        assert!((p.slope() - 7.396).abs() < 1e-3);
        assert!((p.beta() - 5.396).abs() < 1e-3);
        assert!((p.threshold() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backward_at_origin_is_logistic_derivative() {
        let (dx, _) = astra_backward(0.0, 1.0).unwrap();
        assert!((dx - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (x, b) = (0.7, 7.396);
        let (dx, db) = astra_backward(x, b).unwrap();
        let fd_x = central_diff(|v| forward_unchecked(v, b), x, 1e-6);
        let fd_b = central_diff(|v| forward_unchecked(x, v), b, 1e-6);
        assert!(rel_err(dx, fd_x) < 1e-6, "{dx} vs {fd_x}");
        assert!(rel_err(db, fd_b) < 1e-6, "{db} vs {fd_b}");
        let fd_tau = central_diff(threshold_unchecked, b, 1e-6);
        assert!(rel_err(threshold_derivative(b), fd_tau) < 1e-6);
    }

    #[test]
    fn z_examples() {
        assert_eq!(z_transform(0.3, 0.5).unwrap(), 0.3);
        assert!((z_transform(0.25, 0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((z_transform(0.5, 0.25).unwrap() - 0.75).abs() < 1e-15);
        assert!(z_transform(0.5, 0.0).is_err());
        assert!(z_transform(0.5, 1.0).is_err());
    }

    #[test]
    fn z_backward_examples() {
        let (dy, _) = z_transform_backward(0.3, 0.5).unwrap();
        assert!((dy - 1.0).abs() < 1e-15);

        let (dy, _) = z_transform_backward(0.25, 0.25).unwrap();
        let fd = central_diff(|v| z_unchecked(v, 0.25), 0.25, 1e-6);
        assert!(rel_err(dy, fd) < 1e-6);

        let (_, dt) = z_transform_backward(0.9, 0.05).unwrap();
        let fd = central_diff(|t| z_unchecked(0.9, t), 0.05, 1e-6);
        assert!(rel_err(dt, fd) < 1e-6);
    }

    #[test]
    fn misorder_band_examples() {
        assert!(misorder_band_upper(1.0 + 1e-12).unwrap().abs() < 1e-11);
        assert!(misorder_band_upper(1.0).is_err());
        assert!((misorder_band_upper(2.0).unwrap() - 1.5f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn step_is_capped_at_threshold_floor() {
        let mut p = AstraParams::from_threshold(0.25, 0.01).unwrap();
        p.step(-1e6, 1.0);
        assert_eq!(p.slope(), SLOPE_MAX);
        assert!(p.threshold() >= THRESHOLD_FLOOR - 1e-12);
        p.step(1e6, 1.0);
        assert!(p.slope() >= 1.0 && p.threshold() <= 0.5);
    }
}
