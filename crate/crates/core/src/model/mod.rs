//! State space models: the linear Gaussian SSM, the stochastic volatility
//! model and GARCH(1,1) with observation noise.
//!
//! Each model is a parameter struct in natural coordinates implementing
//! [`StateSpaceModel`], the per-particle interface used by the filter. The
//! [`ModelParams`] enum wraps them for everything that is not a hot loop.
//!
//! Gradients, priors and SGLD all live in the *unconstrained* coordinates:
//!
//! | model       | natural            | unconstrained                 |
//! |-------------|--------------------|-------------------------------|
//! | LGSSM / SVM | φ, σ, τ            | φ, σ⁻¹, τ⁻¹                   |
//! | GARCH       | μ, φ, λ, τ         | log μ, logit φ, logit λ, τ    |
//!
//! GARCH's `(α, β, γ)` are recovered as `α = μ(1−φ)`, `β = φλ`, `γ = φ(1−λ)`.

mod garch;
mod lgssm;
mod svm;

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::normal_logpdf;
use crate::particle::ProposalKind;
use crate::rng::Rng;

pub use garch::Garch;
pub use lgssm::Lgssm;
pub use svm::Svm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lgssm,
    Svm,
    Garch,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lgssm => "lgssm",
            ModelKind::Svm => "svm",
            ModelKind::Garch => "garch",
        }
    }

    /// Names of the natural coordinates.
    pub fn natural_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Lgssm | ModelKind::Svm => &["phi", "sigma", "tau"],
            ModelKind::Garch => &["mu", "phi", "lambda", "tau"],
        }
    }

    /// Names of the unconstrained (gradient) coordinates.
    pub fn unconstrained_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Lgssm | ModelKind::Svm => &["phi", "inv_sigma", "inv_tau"],
            ModelKind::Garch => &["log_mu", "logit_phi", "logit_lambda", "tau"],
        }
    }

    pub fn dim(self) -> usize {
        self.natural_names().len()
    }

    /// Proposal used in experiments unless configured otherwise.
    pub fn default_proposal(self) -> ProposalKind {
        match self {
            ModelKind::Svm => ProposalKind::Prior,
            ModelKind::Lgssm | ModelKind::Garch => ProposalKind::OptimalInstrumental,
        }
    }

    /// Data-generating parameters of the synthetic gradient-bias study.
    pub fn reference_params(self) -> ModelParams {
        match self {
            ModelKind::Lgssm => ModelParams::Lgssm(Lgssm::new(0.9, 0.7, 1.0).unwrap()),
            ModelKind::Svm => ModelParams::Svm(Svm::new(0.9, 0.5, 0.5).unwrap()),
            ModelKind::Garch => ModelParams::Garch(Garch::from_abg(0.1, 0.8, 0.05, 0.3).unwrap()),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lgssm" => Ok(ModelKind::Lgssm),
            "svm" => Ok(ModelKind::Svm),
            "garch" => Ok(ModelKind::Garch),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// Latent state. GARCH carries its conditional variance σ_t² alongside x_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub x: f64,
    pub aux_variance: Option<f64>,
}

impl LatentState {
    pub fn scalar(x: f64) -> Self {
        LatentState {
            x,
            aux_variance: None,
        }
    }

    pub fn with_variance(x: f64, variance: f64) -> Self {
        LatentState {
            x,
            aux_variance: Some(variance),
        }
    }
}

/// A simulated path: `latents[0]` is the initial draw, `latents[t]` pairs
/// with `observations[t - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub latents: Vec<LatentState>,
    pub observations: Vec<f64>,
}

/// Per-particle interface of a state space model, in natural coordinates.
///
/// Implementations assume the parameters were validated on construction and
/// that stationarity was checked (see [`ModelParams::check_stationary`])
/// before [`StateSpaceModel::initial_state`] is called.
pub trait StateSpaceModel: Sync {
    const KIND: ModelKind;

    fn initial_state(&self, rng: &mut Rng) -> LatentState;

    fn sample_transition(&self, prev: &LatentState, rng: &mut Rng) -> LatentState;

    fn sample_emission(&self, x: &LatentState, rng: &mut Rng) -> f64;

    fn transition_logpdf(&self, prev: &LatentState, x: &LatentState) -> Result<f64>;

    fn emission_logpdf(&self, x: &LatentState, y: f64) -> f64;

    fn supports_proposal(&self, kind: ProposalKind) -> bool;

    /// Draws `x_t ~ q(· | x_{t-1}, y_t)` and returns it with the incremental
    /// log-weight `log p(y|x) + log p(x|x_prev) − log q(x|x_prev, y)`.
    fn propose(
        &self,
        prev: &LatentState,
        y: f64,
        kind: ProposalKind,
        rng: &mut Rng,
    ) -> (LatentState, f64);

    /// `log p(y_t | x_{t-1})`. Closed form where the one-step marginal is
    /// Gaussian, otherwise a single-draw plug-in.
    fn one_step_logpdf(&self, prev: &LatentState, y: f64, rng: &mut Rng) -> f64;

    /// `out += scale · ∇ log p(x_t, y_t | x_{t-1})` in unconstrained coordinates.
    fn add_complete_data_grad(
        &self,
        x: &LatentState,
        prev: &LatentState,
        y: f64,
        scale: f64,
        out: &mut [f64],
    );
}

/// Model parameters, tagged by model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelParams {
    Lgssm(Lgssm),
    Svm(Svm),
    Garch(Garch),
}

/// Runs `$body` with `$m` bound to the concrete model inside `$params`.
macro_rules! with_model {
    ($params:expr, $m:ident => $body:expr) => {
        match $params {
            $crate::model::ModelParams::Lgssm($m) => $body,
            $crate::model::ModelParams::Svm($m) => $body,
            $crate::model::ModelParams::Garch($m) => $body,
        }
    };
}
pub(crate) use with_model;

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Lgssm(_) => ModelKind::Lgssm,
            ModelParams::Svm(_) => ModelKind::Svm,
            ModelParams::Garch(_) => ModelKind::Garch,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind().dim()
    }

    pub fn from_natural(kind: ModelKind, v: &[f64]) -> Result<Self> {
        check_len(kind, v)?;
        Ok(match kind {
            ModelKind::Lgssm => ModelParams::Lgssm(Lgssm::new(v[0], v[1], v[2])?),
            ModelKind::Svm => ModelParams::Svm(Svm::new(v[0], v[1], v[2])?),
            ModelKind::Garch => ModelParams::Garch(Garch::new(v[0], v[1], v[2], v[3])?),
        })
    }

    pub fn natural(&self) -> Vec<f64> {
        match self {
            ModelParams::Lgssm(m) => vec![m.phi, m.sigma, m.tau],
            ModelParams::Svm(m) => vec![m.phi, m.sigma, m.tau],
            ModelParams::Garch(m) => vec![m.mu, m.phi, m.lambda, m.tau],
        }
    }

    pub fn from_unconstrained(kind: ModelKind, u: &[f64]) -> Result<Self> {
        check_len(kind, u)?;
        Ok(match kind {
            ModelKind::Lgssm => ModelParams::Lgssm(Lgssm::new(u[0], 1.0 / u[1], 1.0 / u[2])?),
            ModelKind::Svm => ModelParams::Svm(Svm::new(u[0], 1.0 / u[1], 1.0 / u[2])?),
            ModelKind::Garch => ModelParams::Garch(Garch::from_unconstrained(u)?),
        })
    }

    pub fn unconstrained(&self) -> Vec<f64> {
        match self {
            ModelParams::Lgssm(m) => vec![m.phi, 1.0 / m.sigma, 1.0 / m.tau],
            ModelParams::Svm(m) => vec![m.phi, 1.0 / m.sigma, 1.0 / m.tau],
            ModelParams::Garch(m) => m.unconstrained().to_vec(),
        }
    }

    /// Errors unless the latent chain has a stationary initial law.
    pub fn check_stationary(&self) -> Result<()> {
        match self {
            ModelParams::Lgssm(Lgssm { phi, .. }) | ModelParams::Svm(Svm { phi, .. }) => {
                if phi.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(Error::domain(format!(
                        "|phi| = {} is outside the stationarity region (|phi| < 1)",
                        phi.abs()
                    )))
                }
            }
            // β + γ = φ < 1 by construction.
            ModelParams::Garch(_) => Ok(()),
        }
    }

    /// Whether SGLD may move here: inside the prior's support and stationary.
    pub fn is_admissible(&self) -> bool {
        self.check_stationary().is_ok() && self.log_prior().is_ok()
    }

    pub fn prior_initial_sample(&self, rng: &mut Rng) -> Result<LatentState> {
        self.check_stationary()?;
        Ok(with_model!(self, m => m.initial_state(rng)))
    }

    pub fn transition_logpdf(&self, prev: &LatentState, x: &LatentState) -> Result<f64> {
        with_model!(self, m => m.transition_logpdf(prev, x))
    }

    pub fn emission_logpdf(&self, x: &LatentState, y: f64) -> f64 {
        with_model!(self, m => m.emission_logpdf(x, y))
    }

    /// `∇ log p(y_t, x_t | x_{t-1}, θ)` in unconstrained coordinates.
    pub fn complete_data_grad(&self, x: &LatentState, prev: &LatentState, y: f64) -> Result<Vec<f64>> {
        if let ModelParams::Garch(_) = self {
            if prev.aux_variance.is_none() {
                return Err(Error::Contract("GARCH state lacks its conditional variance".into()));
            }
        }
        let mut out = vec![0.0; self.dim()];
        with_model!(self, m => m.add_complete_data_grad(x, prev, y, 1.0, &mut out));
        Ok(out)
    }

    /// Log prior density of the unconstrained coordinates (transform
    /// log-Jacobians included). Errors outside the support.
    pub fn log_prior(&self) -> Result<f64> {
        match self {
            ModelParams::Lgssm(m) => ar1_log_prior(m.phi, m.sigma, m.tau),
            ModelParams::Svm(m) => ar1_log_prior(m.phi, m.sigma, m.tau),
            ModelParams::Garch(m) => m.log_prior(),
        }
    }

    /// Gradient of [`ModelParams::log_prior`].
    pub fn log_prior_grad(&self) -> Result<Vec<f64>> {
        match self {
            ModelParams::Lgssm(m) => ar1_log_prior_grad(m.phi, m.sigma, m.tau),
            ModelParams::Svm(m) => ar1_log_prior_grad(m.phi, m.sigma, m.tau),
            ModelParams::Garch(m) => m.log_prior_grad(),
        }
    }

    /// Forward simulation of `t_len` observations.
    pub fn simulate(&self, t_len: usize, rng: &mut Rng) -> Result<Trajectory> {
        self.check_stationary()?;
        with_model!(self, m => {
            let mut latents = Vec::with_capacity(t_len + 1);
            let mut observations = Vec::with_capacity(t_len);
            let mut x = m.initial_state(rng);
            latents.push(x);
            for _ in 0..t_len {
                x = m.sample_transition(&x, rng);
                observations.push(m.sample_emission(&x, rng));
                latents.push(x);
            }
            Ok(Trajectory { latents, observations })
        })
    }

    /// Contraction rate bounding the geometric decay of the buffering error.
    ///
    /// LGSSM: the filtered-kernel coefficient `|φ|·τ²/(σ²+τ²)`; SVM: `|φ|`.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        match self {
            ModelParams::Lgssm(m) => {
                let (s2, t2) = (m.sigma * m.sigma, m.tau * m.tau);
                Ok(m.phi.abs() * t2 / (s2 + t2))
            }
            ModelParams::Svm(m) => Ok(m.phi.abs()),
            ModelParams::Garch(_) => Err(Error::Unsupported {
                model: "garch",
                what: "Lipschitz bound (the model is not log-concave)".into(),
            }),
        }
    }

    /// Draws starting parameters for a sampler.
    ///
    /// LGSSM/SVM: `σ⁻¹, τ⁻¹ ~ Gamma(2, scale 0.5)`, `φ ~ N(0, σ²)`, redrawn
    /// until `|φ| < 1`. GARCH: a draw from the prior.
    pub fn sample_initial(kind: ModelKind, rng: &mut Rng) -> Result<Self> {
        use rand_distr::Gamma;
        match kind {
            ModelKind::Lgssm | ModelKind::Svm => {
                let g = Gamma::new(2.0, 0.5).expect("valid gamma");
                for _ in 0..10_000 {
                    let inv_sigma: f64 = g.sample(rng);
                    let inv_tau: f64 = g.sample(rng);
                    let z: f64 = StandardNormal.sample(rng);
                    let phi = z / inv_sigma;
                    if phi.abs() < 1.0 {
                        return ModelParams::from_unconstrained(kind, &[phi, inv_sigma, inv_tau]);
                    }
                }
                Err(Error::Numeric("could not draw a stationary initial phi".into()))
            }
            ModelKind::Garch => Garch::sample_prior(rng).map(ModelParams::Garch),
        }
    }
}

fn check_len(kind: ModelKind, v: &[f64]) -> Result<()> {
    if v.len() != kind.dim() {
        return Err(Error::Config(format!(
            "{kind} expects {} parameters, got {}",
            kind.dim(),
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(format!("non-finite {kind} parameter in {v:?}")));
    }
    Ok(())
}

pub(crate) fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {v}")))
    }
}

// Shared by the LGSSM and SVM: AR(1) latent chain and parameter prior
//   φ ~ N(0, 100σ²),  σ⁻¹ ~ Gamma(101, rate 101),  τ⁻¹ ~ Gamma(101, rate 101).

pub(crate) const AR1_PRIOR_SHAPE: f64 = 101.0;
pub(crate) const AR1_PRIOR_RATE: f64 = 101.0;
pub(crate) const AR1_PHI_PRIOR_SCALE: f64 = 100.0;

fn ar1_log_prior(phi: f64, sigma: f64, tau: f64) -> Result<f64> {
    use crate::math::gamma_logpdf;
    let (a, b) = (1.0 / sigma, 1.0 / tau);
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain("sigma and tau must be positive"));
    }
    Ok(normal_logpdf(phi, 0.0, AR1_PHI_PRIOR_SCALE * sigma * sigma)
        + gamma_logpdf(a, AR1_PRIOR_SHAPE, AR1_PRIOR_RATE)
        + gamma_logpdf(b, AR1_PRIOR_SHAPE, AR1_PRIOR_RATE))
}

/// Gradient of the Gamma(shape, rate) log-density in its own variable.
pub(crate) fn gamma_log_grad(x: f64, shape: f64, rate: f64) -> f64 {
    (shape - 1.0) / x - rate
}

fn ar1_log_prior_grad(phi: f64, sigma: f64, tau: f64) -> Result<Vec<f64>> {
    let (a, b) = (1.0 / sigma, 1.0 / tau);
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain("sigma and tau must be positive"));
    }
    // log N(φ | 0, 100/a²) = const + log a − φ²a²/200
    let s = AR1_PHI_PRIOR_SCALE;
    Ok(vec![
        -phi * a * a / s,
        1.0 / a - phi * phi * a / s + gamma_log_grad(a, AR1_PRIOR_SHAPE, AR1_PRIOR_RATE),
        gamma_log_grad(b, AR1_PRIOR_SHAPE, AR1_PRIOR_RATE),
    ])
}

#[inline]
pub(crate) fn std_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}


#[cfg(test)]
mod tests;
