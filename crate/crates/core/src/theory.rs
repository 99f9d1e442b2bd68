//! Concentration-bound parameters `delta_1 .. delta_7`, `eta`, and `eps`
//! as executable diagnostics.
//!
//! Every `delta` is a sum of exponentials, so values are assembled in the
//! log domain; `delta_4`'s polynomial prefactor `(4 B K sqrt(h) / (tau eps))^h`
//! would otherwise overflow long before the tail term underflows. Reported
//! probabilities are clipped to `[0, 1]` only in [`DiagnosticRow`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::BatchSchedule;

/// Inputs to the bound formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub n: f64,
    pub m: f64,
    pub k: f64,
    pub b: f64,
    pub tau: f64,
    pub p1: f64,
    pub d: usize,
    /// Number of cones of angle pi/6 covering `R^d`.
    pub gamma_d: f64,
    /// Lower density bound.
    pub alpha: f64,
    /// Upper density bound.
    pub beta: f64,
    /// Lebesgue measure of the support of `X`.
    pub lambda_x: f64,
    pub epsilon_star: f64,
    /// Lipschitz constant of the network in its parameters.
    #[serde(default)]
    pub lipschitz_b: Option<f64>,
    /// Parameter-norm bound.
    #[serde(default)]
    pub norm_k: Option<f64>,
    /// Number of network parameters.
    #[serde(default)]
    pub param_count_h: Option<f64>,
}

/// Conservative `gamma_d`.
///
/// `d = 1` needs the two half-lines and `d = 2` needs `2 pi / (pi / 6) = 12`
/// sectors. For `d >= 3` this returns the volumetric covering bound
/// `(1 + 1 / sin(pi / 24))^d`, which is far from tight.
pub fn default_gamma_d(d: usize) -> f64 {
    match d {
        0 | 1 => 2.0,
        2 => 12.0,
        _ => (1.0 + 1.0 / (std::f64::consts::PI / 24.0).sin()).powi(d as i32),
    }
}

impl BoundParams {
    /// Parameters for a batch schedule, with placeholder density bounds
    /// `alpha = 0.01`, `beta = 1`, `lambda_x = 1`, `epsilon_star = 0.1`.
    pub fn from_schedule(schedule: &BatchSchedule, tau: f64, d: usize) -> Self {
        Self {
            n: schedule.n as f64,
            m: schedule.m as f64,
            k: schedule.k as f64,
            b: schedule.b as f64,
            tau,
            p1: schedule.p1(),
            d,
            gamma_d: default_gamma_d(d),
            alpha: 0.01,
            beta: 1.0,
            lambda_x: 1.0,
            epsilon_star: 0.1,
            lipschitz_b: None,
            norm_k: None,
            param_count_h: None,
        }
    }

    /// The theory-mode schedule `k = n^(1/2 + epsilon_0)`, `m = k`, `b = m k`.
    pub fn theory_schedule(n: f64, epsilon_0: f64, tau: f64, d: usize) -> Self {
        let k = n.powf(0.5 + epsilon_0);
        Self {
            n,
            m: k,
            k,
            b: k * k,
            tau,
            p1: 0.5,
            d,
            gamma_d: default_gamma_d(d),
            alpha: 0.01,
            beta: 1.0,
            lambda_x: 1.0,
            epsilon_star: 0.1,
            lipschitz_b: None,
            norm_k: None,
            param_count_h: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m < self.n) {
            return Err(Error::config(format!("m = {} must be below n = {}", self.m, self.n)));
        }
        if !(self.k > 0.0 && self.b > 0.0 && self.gamma_d > 0.0) {
            return Err(Error::config("k, b, and gamma_d must be positive"));
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return Err(Error::config(format!("p1 must lie in (0, 1), got {}", self.p1)));
        }
        if !(self.tau > 0.0 && self.tau < 0.5f64.min(self.p1)) {
            return Err(Error::config(format!("tau must lie in (0, min(1/2, p1)), got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha < self.beta) {
            return Err(Error::config("density bounds need 0 < alpha < beta"));
        }
        if !(self.lambda_x > 0.0 && self.epsilon_star > 0.0) {
            return Err(Error::config("lambda_x and epsilon_star must be positive"));
        }
        Ok(())
    }

    fn log_odds_cap(&self) -> f64 {
        ((1.0 - self.tau) / self.tau).ln()
    }

    fn ratio_c(&self) -> f64 {
        (1.0 - self.p1) / self.p1 * (1.0 - 2.0 * self.tau) / (self.tau * (1.0 - self.tau))
    }

    fn ratio_m(&self) -> f64 {
        (1.0 - self.p1) / self.p1 * (1.0 - self.tau) / self.tau
    }
}

/// `ln(sum exp(terms))`.
fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

const LN2: f64 = std::f64::consts::LN_2;

/// `ln delta_1(eps, c, M)`.
pub fn log_delta1(eps: f64, c: f64, big_m: f64, p: &BoundParams) -> Result<f64> {
    if !(eps > 0.0 && c > 0.0 && big_m > 0.0) {
        return Err(Error::config("delta_1 needs eps, c, M > 0"));
    }
    if !(p.m < p.n) {
        return Err(Error::config(format!("delta_1 needs m < n, got m = {}, n = {}", p.m, p.n)));
    }
    let (e2, k2, c2) = (eps * eps, p.k * p.k, c * c);
    Ok(log_sum_exp(&[
        LN2 - 2.0 * e2 * k2 / (p.n * c2),
        LN2 - 2.0 * e2 * k2 / ((p.n - p.m) * c2),
        -(p.n - p.m) * e2 / (8.0 * big_m * big_m * p.gamma_d * p.gamma_d),
    ]))
}

/// `delta_1(eps, c, M)`.
pub fn delta1(eps: f64, c: f64, big_m: f64, p: &BoundParams) -> Result<f64> {
    log_delta1(eps, c, big_m, p).map(f64::exp)
}

/// `ln delta_i(eps)` for `i` in `2..=7`.
pub fn log_delta_chain(i: usize, eps: f64, p: &BoundParams) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::config("eps must be positive"));
    }
    let cap = p.log_odds_cap();
    let b = p.b;
    let p1 = p.p1;
    let tau = p.tau;
    match i {
        2 => log_delta1(eps, cap, -tau.ln(), p),
        3 => {
            let s = 3.0 - 2.0 * p1;
            let head = log_delta_chain(2, eps / s, p)?;
            let tail = LN2 - 2.0 * b * eps * eps / (s * cap).powi(2);
            Ok(log_sum_exp(&[head, tail]))
        }
        4 => {
            let (bb, kk, h) = match (p.lipschitz_b, p.norm_k, p.param_count_h) {
                (Some(bb), Some(kk), Some(h)) => (bb, kk, h),
                _ => {
                    return Err(Error::config(
                        "delta_4 needs the Lipschitz constant B, norm bound K, and parameter count h",
                    ))
                }
            };
            let prefactor = h * (4.0 * bb * kk * h.sqrt() / (tau * eps)).ln();
            Ok(prefactor + log_delta_chain(3, eps, p)?)
        }
        5 => {
            let w = 2.0 * tau + 6.0 * p1 - 8.0 * p1 * tau;
            let head = log_delta1((1.0 - p1) * eps * tau / w, p.ratio_c(), p.ratio_m(), p)?;
            let tail = LN2 - b * (1.0 - p1).powi(2) * eps * eps * tau * tau / (2.0 * (w * cap).powi(2));
            Ok(log_sum_exp(&[head, tail]))
        }
        6 => {
            let head = log_delta1(eps / 8.0, p.ratio_c(), p.ratio_m(), p)?;
            let tail = LN2 - b * eps * eps / (128.0 * cap * cap);
            Ok(log_sum_exp(&[head, tail]))
        }
        7 => Ok(LN2 - b * eps * eps / (8.0 * cap * cap)),
        other => Err(Error::config(format!("delta index must be in 2..=7, got {other}"))),
    }
}

/// `delta_i(eps)` for `i` in `2..=7`; may be `+inf` or `0` when the
/// log-domain value leaves the `f64` range.
pub fn delta_chain(i: usize, eps: f64, p: &BoundParams) -> Result<f64> {
    log_delta_chain(i, eps, p).map(f64::exp)
}

/// `(eta, eps)` with `eta = tau^3 (1 - tau) eps* / (2 (2 tau^2 - 2 tau + 1) beta)`
/// and `eps = (eta / (1 - tau))^2 alpha / (2 lambda_x)`.
pub fn eta_eps(p: &BoundParams) -> (f64, f64) {
    let tau = p.tau;
    let eta = tau.powi(3) * (1.0 - tau) * p.epsilon_star / (2.0 * (2.0 * tau * tau - 2.0 * tau + 1.0) * p.beta);
    let eps = (eta / (1.0 - tau)).powi(2) * p.alpha / (2.0 * p.lambda_x);
    (eta, eps)
}

/// One line of the diagnostic table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub name: String,
    pub eps: f64,
    /// Natural log of the bound, when defined.
    pub log_value: Option<f64>,
    /// The bound as a probability, clipped to `[0, 1]`.
    pub probability: Option<f64>,
}

/// `delta_1 .. delta_7` at `eps`, followed by `eta` and the derived `eps`.
///
/// The `delta_1` row uses `c = ln((1 - tau)/tau)` and `M = -ln tau`, the
/// arguments `delta_2` passes on. Rows that cannot be evaluated (such as
/// `delta_4` without `B`, `K`, `h`) are left empty.
pub fn diagnostic_table(p: &BoundParams, eps: f64) -> Result<Vec<DiagnosticRow>> {
    p.validate()?;
    let row = |name: &str, log: Option<f64>| DiagnosticRow {
        name: name.to_string(),
        eps,
        log_value: log,
        probability: log.map(|l| l.exp().clamp(0.0, 1.0)),
    };
    let mut rows = vec![row("delta1", Some(log_delta1(eps, p.log_odds_cap(), -p.tau.ln(), p)?))];
    for i in 2..=7 {
        rows.push(row(&format!("delta{i}"), log_delta_chain(i, eps, p).ok()));
    }
    let (eta, derived) = eta_eps(p);
    for (name, v) in [("eta", eta), ("eps", derived)] {
        rows.push(DiagnosticRow {
            name: name.to_string(),
            eps,
            log_value: Some(v.ln()),
            probability: None,
        });
    }
    Ok(rows)
}

/// Writes the diagnostic table as CSV with columns `name,eps,log_value,probability`.
pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
