//! One-hidden-layer perceptron with Leaky ReLU hidden units and a single
//! asymmetric sigmoid output, trained full-batch with Adam.
//!
//! Weights live in one flat vector laid out as `[w1 | b1 | w2 | b2]` with `w1`
//! row-major `(n_h, n_x)`. The slope parameter is kept apart and moved by
//! plain gradient descent at its own rate.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::activation::{
    self, backward_unchecked, clamp_output, forward_unchecked, threshold_derivative, z_backward_unchecked, z_unchecked,
    AstraParams, OUTPUT_EPS,
};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::matrix::Matrix;
use crate::par::{map_chunks, ROW_CHUNK};
use crate::seed;

pub const LEAKY_SLOPE: f64 = 0.3;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `ceil((n_x + 1) / 2)` hidden units for a single output.
pub fn hidden_units(n_x: usize) -> usize {
    (n_x + 1).div_ceil(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenInit {
    #[default]
    HeNormal,
    HeUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputInit {
    #[default]
    GlorotUniform,
    GlorotNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InitScheme {
    pub hidden: HiddenInit,
    pub output: OutputInit,
}

#[derive(Debug, Clone, PartialEq)]
struct AdamState {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    n_x: usize,
    n_h: usize,
    params: Vec<f64>,
    adam: AdamState,
    astra: Option<AstraParams>,
    seed: u64,
}

/// Per-example intermediate values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<'a> {
    pub inputs: &'a Matrix,
    pub hidden_pre: Matrix,
    pub hidden_act: Matrix,
    /// Output preactivation.
    pub out_pre: Vec<f64>,
    /// Clamped output of the asymmetric sigmoid.
    pub y_hat: Vec<f64>,
    /// Clamped threshold-corrected output; equals `y_hat` without the
    /// asymmetric unit.
    pub z: Vec<f64>,
}

/// Gradient of a loss with respect to every trainable quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    /// `dJ/dbeta`; zero without the asymmetric unit.
    pub beta: f64,
}

#[inline]
fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Network with the default initialisation; see [`Mlp::with_init`].
pub fn init_mlp(n_x: usize, n_h: usize, seed: u64) -> Result<Mlp> {
    Mlp::with_init(n_x, n_h, seed, InitScheme::default(), None)
}

impl Mlp {
    /// He initialisation for the hidden layer, Glorot for the output, zero
    /// biases. `astra` enables the learnable slope; `None` fixes it at 1.
    pub fn with_init(n_x: usize, n_h: usize, seed: u64, init: InitScheme, astra: Option<AstraParams>) -> Result<Self> {
        if n_x == 0 || n_h == 0 {
            return Err(Error::Config(format!(
                "network sizes must be positive, got n_x={n_x}, n_h={n_h}"
            )));
        }
        let mut rng = seed::rng(seed);
        let n_params = n_h * n_x + n_h + n_h + 1;
        let mut params = vec![0.0; n_params];

        let he_std = (2.0 / n_x as f64).sqrt();
        let w1 = &mut params[..n_h * n_x];
        match init.hidden {
            HiddenInit::HeNormal => {
                let dist = Normal::new(0.0, he_std).expect("positive std");
                w1.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            }
            HiddenInit::HeUniform => {
                let lim = he_std * 3f64.sqrt();
                w1.iter_mut().for_each(|w| *w = rng.random_range(-lim..=lim));
            }
        }

        let fan_sum = (n_h + 1) as f64;
        let w2_start = n_h * n_x + n_h;
        let w2 = &mut params[w2_start..w2_start + n_h];
        match init.output {
            OutputInit::GlorotUniform => {
                let lim = (6.0 / fan_sum).sqrt();
                let dist = Uniform::new_inclusive(-lim, lim).expect("finite bounds");
                w2.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            }
            OutputInit::GlorotNormal => {
                let dist = Normal::new(0.0, (2.0 / fan_sum).sqrt()).expect("positive std");
                w2.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            }
        }

        Ok(Mlp {
            n_x,
            n_h,
            adam: AdamState {
                t: 0,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
            },
            params,
            astra,
            seed,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_x
    }

    pub fn n_hidden(&self) -> usize {
        self.n_h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Overwrites the weights; Adam state is left alone.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.n_h * self.n_x]
    }

    pub fn b1(&self) -> &[f64] {
        let s = self.n_h * self.n_x;
        &self.params[s..s + self.n_h]
    }

    pub fn w2(&self) -> &[f64] {
        let s = self.n_h * self.n_x + self.n_h;
        &self.params[s..s + self.n_h]
    }

    pub fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn astra(&self) -> Option<&AstraParams> {
        self.astra.as_ref()
    }

    pub fn astra_mut(&mut self) -> Option<&mut AstraParams> {
        self.astra.as_mut()
    }

    /// Current slope; 1 when the asymmetric unit is disabled.
    pub fn slope(&self) -> f64 {
        self.astra.as_ref().map_or(1.0, AstraParams::slope)
    }

    /// Current decision threshold on `y_hat`.
    pub fn threshold(&self) -> f64 {
        self.astra.as_ref().map_or(0.5, AstraParams::threshold)
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.t
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.n_x {
            return Err(Error::Shape {
                expected: self.n_x,
                found: x.cols(),
            });
        }
        Ok(())
    }

    #[inline]
    fn hidden_row(&self, row: &[f64], pre: &mut [f64], act: &mut [f64]) -> f64 {
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let mut out = self.b2();
        for j in 0..self.n_h {
            let w = &w1[j * self.n_x..(j + 1) * self.n_x];
            let s = w.iter().zip(row).fold(b1[j], |acc, (a, b)| acc + a * b);
            pre[j] = s;
            act[j] = leaky(s);
            out += w2[j] * act[j];
        }
        out
    }

    pub fn forward<'a>(&self, x: &'a Matrix) -> Result<ForwardTrace<'a>> {
        self.check_width(x)?;
        let n = x.rows();
        let (b, tau) = (self.slope(), self.threshold());
        let astra_on = self.astra.is_some();
        let chunks = map_chunks(n, ROW_CHUNK, |range| {
            let len = range.len();
            let mut pre = vec![0.0; len * self.n_h];
            let mut act = vec![0.0; len * self.n_h];
            let mut out = Vec::with_capacity(len);
            let mut y_hat = Vec::with_capacity(len);
            let mut z = Vec::with_capacity(len);
            for (r, i) in range.enumerate() {
                let s = r * self.n_h..(r + 1) * self.n_h;
                let o = self.hidden_row(x.row(i), &mut pre[s.clone()], &mut act[s]);
                let y = clamp_output(forward_unchecked(o, b));
                out.push(o);
                y_hat.push(y);
                z.push(if astra_on { clamp_output(z_unchecked(y, tau)) } else { y });
            }
            (pre, act, out, y_hat, z)
        });
        let mut trace = ForwardTrace {
            inputs: x,
            hidden_pre: Matrix::zeros(0, 0),
            hidden_act: Matrix::zeros(0, 0),
            out_pre: Vec::with_capacity(n),
            y_hat: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
        };
        let mut pre = Vec::with_capacity(n * self.n_h);
        let mut act = Vec::with_capacity(n * self.n_h);
        for (p, a, o, y, z) in chunks {
            pre.extend(p);
            act.extend(a);
            trace.out_pre.extend(o);
            trace.y_hat.extend(y);
            trace.z.extend(z);
        }
        trace.hidden_pre = Matrix::new(n, self.n_h, pre)?;
        trace.hidden_act = Matrix::new(n, self.n_h, act)?;
        Ok(trace)
    }

    /// Threshold-corrected outputs only, without keeping hidden activations.
    pub fn predict_z(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_width(x)?;
        let (b, tau) = (self.slope(), self.threshold());
        let astra_on = self.astra.is_some();
        let chunks = map_chunks(x.rows(), ROW_CHUNK, |range| {
            let mut pre = vec![0.0; self.n_h];
            let mut act = vec![0.0; self.n_h];
            range
                .map(|i| {
                    let o = self.hidden_row(x.row(i), &mut pre, &mut act);
                    let y = clamp_output(forward_unchecked(o, b));
                    if astra_on {
                        clamp_output(z_unchecked(y, tau))
                    } else {
                        y
                    }
                })
                .collect::<Vec<_>>()
        });
        Ok(chunks.concat())
    }

    /// Class 1 iff the output preactivation is non-negative, i.e. `y_hat >= tau`.
    pub fn predict_labels(&self, x: &Matrix) -> Result<Vec<u8>> {
        self.check_width(x)?;
        let chunks = map_chunks(x.rows(), ROW_CHUNK, |range| {
            let mut pre = vec![0.0; self.n_h];
            let mut act = vec![0.0; self.n_h];
            range
                .map(|i| u8::from(self.hidden_row(x.row(i), &mut pre, &mut act) >= 0.0))
                .collect::<Vec<_>>()
        });
        Ok(chunks.concat())
    }

    fn check_loss(&self, loss: LossKind) -> Result<()> {
        if loss.use_astra != self.astra.is_some() {
            return Err(Error::Config(format!(
                "loss '{loss}' does not match a network {} the asymmetric output",
                if self.astra.is_some() { "with" } else { "without" }
            )));
        }
        Ok(())
    }

    /// Exact gradient of `loss` for the state that produced `trace`.
    pub fn gradients(&self, trace: &ForwardTrace<'_>, y: &[u8], loss: LossKind) -> Result<Gradients> {
        self.check_loss(loss)?;
        let n = trace.z.len();
        if y.len() != n {
            return Err(Error::LengthMismatch {
                left: y.len(),
                right: n,
            });
        }
        let (value, dz) = loss.value_and_grad(&trace.z, y)?;
        let (b, tau) = (self.slope(), self.threshold());
        let astra_on = self.astra.is_some();
        let dtau_db = if astra_on { threshold_derivative(b) } else { 0.0 };
        let (n_x, n_h) = (self.n_x, self.n_h);
        let b1_start = n_h * n_x;
        let w2_start = b1_start + n_h;
        let n_params = self.params.len();
        let w2 = self.w2();
        let interior = |v: f64| v > OUTPUT_EPS && v < 1.0 - OUTPUT_EPS;

        // Partial sums per fixed row chunk; the last slot carries dJ/db.
        let partials = map_chunks(n, ROW_CHUNK, |range| {
            let mut g = vec![0.0; n_params + 1];
            for i in range {
                // Clamped outputs pass no gradient back to what produced them.
                let dj_dz = if !astra_on || interior(trace.z[i]) { dz[i] } else { 0.0 };
                let y_live = interior(trace.y_hat[i]);
                let (dz_dy, dz_dtau) = if astra_on {
                    z_backward_unchecked(trace.y_hat[i], tau)
                } else {
                    (1.0, 0.0)
                };
                let (dy_dx, dy_db) = backward_unchecked(trace.out_pre[i], b);
                let dj_dy = if y_live { dj_dz * dz_dy } else { 0.0 };
                if astra_on {
                    let via_y = if y_live { dz_dy * dy_db } else { 0.0 };
                    g[n_params] += dj_dz * (via_y + dz_dtau * dtau_db);
                }
                let dj_dout = dj_dy * dy_dx;
                if dj_dout == 0.0 {
                    continue;
                }
                let input = trace.inputs.row(i);
                let pre = trace.hidden_pre.row(i);
                let act = trace.hidden_act.row(i);
                for j in 0..n_h {
                    g[w2_start + j] += dj_dout * act[j];
                    let dpre = dj_dout * w2[j] * leaky_grad(pre[j]);
                    g[b1_start + j] += dpre;
                    let row = &mut g[j * n_x..(j + 1) * n_x];
                    for (gk, xk) in row.iter_mut().zip(input) {
                        *gk += dpre * xk;
                    }
                }
                g[n_params - 1] += dj_dout;
            }
            g
        });
        let mut total = vec![0.0; n_params + 1];
        for part in partials {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        }
        let dj_db = total.pop().unwrap_or(0.0);
        let beta = match &self.astra {
            Some(a) => dj_db * activation::slope_derivative(a.beta()),
            None => 0.0,
        };
        Ok(Gradients {
            loss: value,
            params: total,
            beta,
        })
    }

    /// One Adam step on the weights at rate `eta` and, with the asymmetric
    /// unit, one plain step on beta at rate `eta_b`. Returns the loss before
    /// the step and `dJ/dbeta`. Nothing is modified if any gradient or
    /// updated weight is non-finite.
    pub fn backward_and_step(
        &mut self,
        trace: &ForwardTrace<'_>,
        y: &[u8],
        loss: LossKind,
        eta: f64,
        eta_b: f64,
    ) -> Result<(f64, f64)> {
        let grads = self.gradients(trace, y, loss)?;
        let step = self.adam.t + 1;
        let non_finite = |what: &str| Error::NonFinite {
            epoch: step as usize,
            what: what.to_string(),
        };
        if !grads.loss.is_finite() {
            return Err(non_finite("loss"));
        }
        if grads.params.iter().any(|g| !g.is_finite()) || !grads.beta.is_finite() {
            return Err(non_finite("gradient"));
        }

        let t = step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let mut m = self.adam.m.clone();
        let mut v = self.adam.v.clone();
        let mut params = self.params.clone();
        for i in 0..params.len() {
            let g = grads.params[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= eta * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(non_finite("weight"));
        }
        self.params = params;
        self.adam = AdamState { t: step, m, v };
        if let Some(a) = self.astra.as_mut() {
            a.step(grads.beta, eta_b);
        }
        Ok((grads.loss, grads.beta))
    }

    /// Writes a self-describing text checkpoint. Every real is stored as the
    /// hex of its IEEE-754 bits (with a decimal comment), so reading it back
    /// is bit-exact.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        fn hex(v: f64) -> String {
            format!("{:016x}", v.to_bits())
        }
        fn vec_line(v: &[f64]) -> String {
            v.iter().map(|&x| hex(x)).collect::<Vec<_>>().join(" ")
        }
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "n_x {}", self.n_x)?;
        writeln!(out, "n_h {}", self.n_h)?;
        writeln!(out, "seed {}", self.seed)?;
        match &self.astra {
            Some(a) => {
                writeln!(out, "astra on")?;
                writeln!(out, "beta {} # {}", hex(a.beta()), a.beta())?;
                writeln!(out, "slope {} # {}", hex(a.slope()), a.slope())?;
                writeln!(out, "threshold {} # {}", hex(a.threshold()), a.threshold())?;
                writeln!(out, "eta_b {} # {}", hex(a.eta_b()), a.eta_b())?;
            }
            None => writeln!(out, "astra off")?,
        }
        writeln!(out, "adam_t {}", self.adam.t)?;
        writeln!(out, "params {}", vec_line(&self.params))?;
        writeln!(out, "adam_m {}", vec_line(&self.adam.m))?;
        writeln!(out, "adam_v {}", vec_line(&self.adam.v))?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(l))) if l.trim() == CHECKPOINT_MAGIC => {}
            Some((_, Err(e))) => return Err(e.into()),
            _ => return Err(Error::parse(1, "not a network checkpoint")),
        }
        for (n, line) in lines {
            let line = line?;
            let body = line.split('#').next().unwrap_or_default().trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once(' ').unwrap_or((body, ""));
            fields.insert(k.to_string(), (n + 1, v.trim().to_string()));
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::parse(0, format!("checkpoint lacks '{k}'")))
        };
        let int = |k: &str| -> Result<u64> {
            let (line, v) = get(k)?;
            v.parse()
                .map_err(|_| Error::parse(*line, format!("bad integer for '{k}'")))
        };
        let reals = |k: &str| -> Result<Vec<f64>> {
            let (line, v) = get(k)?;
            v.split_whitespace()
                .map(|t| {
                    u64::from_str_radix(t, 16)
                        .map(f64::from_bits)
                        .map_err(|_| Error::parse(*line, format!("bad value '{t}' for '{k}'")))
                })
                .collect()
        };
        let real = |k: &str| -> Result<f64> {
            let v = reals(k)?;
            match v.as_slice() {
                [x] => Ok(*x),
                _ => Err(Error::parse(get(k)?.0, format!("'{k}' needs one value"))),
            }
        };

        let n_x = int("n_x")? as usize;
        let n_h = int("n_h")? as usize;
        let n_params = n_h * n_x + 2 * n_h + 1;
        let astra = match get("astra")?.1.as_str() {
            "on" => {
                let a = AstraParams::from_beta(real("beta")?, real("eta_b")?)?;
                if a.slope().to_bits() != real("slope")?.to_bits()
                    || a.threshold().to_bits() != real("threshold")?.to_bits()
                {
                    return Err(Error::parse(get("beta")?.0, "slope/threshold inconsistent with beta"));
                }
                Some(a)
            }
            "off" => None,
            other => {
                return Err(Error::parse(
                    get("astra")?.0,
                    format!("astra must be on/off, got '{other}'"),
                ))
            }
        };
        let params = reals("params")?;
        let m = reals("adam_m")?;
        let v = reals("adam_v")?;
        for (k, vec) in [("params", &params), ("adam_m", &m), ("adam_v", &v)] {
            if vec.len() != n_params {
                return Err(Error::parse(
                    get(k)?.0,
                    format!("'{k}' has {} values, expected {n_params}", vec.len()),
                ));
            }
        }
        Ok(Mlp {
            n_x,
            n_h,
            params,
            adam: AdamState {
                t: int("adam_t")?,
                m,
                v,
            },
            astra,
            seed: int("seed")?,
        })
    }
}

const CHECKPOINT_MAGIC: &str = "astra-mlp-checkpoint 1";
