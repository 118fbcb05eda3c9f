//! Exact filtering, smoothing, likelihood and score for the LGSSM.
//!
//! These are the `N = ∞` counterparts of the particle estimators. Beliefs are
//! indexed `0..=T` with index 0 the initial state `x_0` (no observation) and
//! index `t` pairing with `y[t - 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{EstimatorKind, GradientEstimate, GradientMeta};
use crate::math::normal_logpdf;
use crate::model::{Lgssm, ModelParams};

/// Marginal Gaussian belief over one latent state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub variance: f64,
    /// `Cov(x_t, x_{t-1} | y)`; set on smoothed beliefs for `t ≥ 1`.
    pub cross_covariance: Option<f64>,
}

/// Law of `x_0`. Defaults to the stationary `N(0, σ²/(1−φ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialLaw {
    pub mean: f64,
    pub variance: f64,
}

impl InitialLaw {
    pub fn stationary(m: &Lgssm) -> Result<Self> {
        if m.phi.abs() >= 1.0 {
            return Err(Error::domain(format!("|phi| = {} has no stationary law", m.phi.abs())));
        }
        Ok(InitialLaw {
            mean: 0.0,
            variance: m.stationary_variance(),
        })
    }
}

fn lgssm(params: &ModelParams) -> Result<&Lgssm> {
    match params {
        ModelParams::Lgssm(m) => Ok(m),
        other => Err(Error::Unsupported {
            model: other.kind().name(),
            what: "exact Kalman recursions (LGSSM only)".into(),
        }),
    }
}

struct Pass {
    filtered: Vec<GaussianBelief>,
    /// One-step predicted variances `Var(x_t | y_{<t})`, `t = 1..=T` at index `t`.
    predicted_var: Vec<f64>,
    loglik: f64,
}

fn forward(m: &Lgssm, y: &[f64], init: InitialLaw) -> Pass {
    let (s2, t2) = (m.sigma * m.sigma, m.tau * m.tau);
    let mut filtered = Vec::with_capacity(y.len() + 1);
    let mut predicted_var = Vec::with_capacity(y.len() + 1);
    filtered.push(GaussianBelief {
        mean: init.mean,
        variance: init.variance,
        cross_covariance: None,
    });
    predicted_var.push(init.variance);
    let (mut mean, mut var) = (init.mean, init.variance);
    let mut loglik = 0.0;
    for &yt in y {
        let pm = m.phi * mean;
        let pv = m.phi * m.phi * var + s2;
        let sv = pv + t2;
        loglik += normal_logpdf(yt, pm, sv);
        let gain = pv / sv;
        mean = pm + gain * (yt - pm);
        // (1 − K)·P⁻ written as P⁻τ²/(P⁻+τ²) stays positive for huge τ.
        var = pv * t2 / sv;
        filtered.push(GaussianBelief {
            mean,
            variance: var,
            cross_covariance: None,
        });
        predicted_var.push(pv);
    }
    Pass {
        filtered,
        predicted_var,
        loglik,
    }
}

/// Filtered beliefs (`T + 1` of them) and the exact `log p(y_{1:T} | θ)`.
pub fn kalman_filter(params: &ModelParams, y: &[f64]) -> Result<(Vec<GaussianBelief>, f64)> {
    let m = lgssm(params)?;
    let pass = forward(m, y, InitialLaw::stationary(m)?);
    Ok((pass.filtered, pass.loglik))
}

/// [`kalman_filter`] with an explicit law for `x_0`.
pub fn kalman_filter_with(
    params: &ModelParams,
    y: &[f64],
    init: InitialLaw,
) -> Result<(Vec<GaussianBelief>, f64)> {
    let m = lgssm(params)?;
    let pass = forward(m, y, init);
    Ok((pass.filtered, pass.loglik))
}

/// Exact `log p(y | θ)` under the stationary initial law.
pub fn loglik(params: &ModelParams, y: &[f64]) -> Result<f64> {
    kalman_filter(params, y).map(|(_, ll)| ll)
}

/// Smoothed beliefs with lag-one cross-covariances (Rauch–Tung–Striebel).
pub fn kalman_smoother(params: &ModelParams, y: &[f64]) -> Result<Vec<GaussianBelief>> {
    let m = lgssm(params)?;
    smoother_with(m, y, InitialLaw::stationary(m)?)
}

fn smoother_with(m: &Lgssm, y: &[f64], init: InitialLaw) -> Result<Vec<GaussianBelief>> {
    let pass = forward(m, y, init);
    let n = pass.filtered.len();
    let mut out = pass.filtered.clone();
    for t in (0..n - 1).rev() {
        let f = pass.filtered[t];
        let pv = pass.predicted_var[t + 1];
        let gain = f.variance * m.phi / pv;
        let next = out[t + 1];
        let pred_mean = m.phi * f.mean;
        out[t].mean = f.mean + gain * (next.mean - pred_mean);
        out[t].variance = f.variance + gain * gain * (next.variance - pv);
        out[t + 1].cross_covariance = Some(gain * next.variance);
    }
    if out.iter().any(|b| b.variance.is_nan() || b.variance <= 0.0 || !b.mean.is_finite()) {
        return Err(Error::Numeric("Kalman smoother produced a non-positive variance".into()));
    }
    Ok(out)
}

/// `Σ_t weights[t] · E[∇ log p(x_t, y_t | x_{t-1}, θ) | y]` in closed form,
/// in the coordinates `(φ, σ⁻¹, τ⁻¹)`. `weights[t]` pairs with `y[t]`.
///
/// The initial law enters only through the smoother; no `∇ log ν(x_0)` term
/// is added, matching the particle estimator's `H_0 = 0`.
pub fn exact_score(params: &ModelParams, y: &[f64], weights: &[f64]) -> Result<GradientEstimate> {
    let m = lgssm(params)?;
    let init = InitialLaw::stationary(m)?;
    let grad = score_with(m, y, weights, init)?;
    Ok(GradientEstimate {
        grad,
        meta: GradientMeta {
            s: y.len(),
            b: 0,
            n: None,
            kind: EstimatorKind::Full,
            loglik: Some(forward(m, y, init).loglik),
        },
    })
}

pub(crate) fn score_with(m: &Lgssm, y: &[f64], weights: &[f64], init: InitialLaw) -> Result<Vec<f64>> {
    if weights.len() != y.len() {
        return Err(Error::domain(format!(
            "{} weights for {} observations",
            weights.len(),
            y.len()
        )));
    }
    let mut g = vec![0.0; 3];
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(g);
    }
    let sm = smoother_with(m, y, init)?;
    let (s2, t2) = (m.sigma * m.sigma, m.tau * m.tau);
    let phi = m.phi;
    for (t, (&yt, &w)) in y.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let (prev, cur) = (sm[t], sm[t + 1]);
        let cross = cur.cross_covariance.unwrap_or(0.0) + cur.mean * prev.mean;
        let prev_sq = prev.variance + prev.mean * prev.mean;
        let cur_sq = cur.variance + cur.mean * cur.mean;
        // E[(x_t − φ x_{t-1})²] and E[(y_t − x_t)²]
        let resid_sq = cur_sq - 2.0 * phi * cross + phi * phi * prev_sq;
        let obs_sq = (yt - cur.mean).powi(2) + cur.variance;
        g[0] += w * (cross - phi * prev_sq) / s2;
        g[1] += w * (s2 - resid_sq) / m.sigma;
        g[2] += w * (t2 - obs_sq) / m.tau;
    }
    Ok(g)
}

/// Exact log posterior `log p(y | θ) + log p(θ)` in unconstrained coordinates.
pub fn log_posterior(params: &ModelParams, y: &[f64]) -> Result<f64> {
    Ok(loglik(params, y)? + params.log_prior()?)
}

#[cfg(test)]
mod tests;
