use serde::{Deserialize, Serialize};

use super::{check_positive, std_normal, LatentState, ModelKind, StateSpaceModel};
use crate::error::{Error, Result};
use crate::math::{normal_logpdf, LN_2PI};
use crate::particle::ProposalKind;
use crate::rng::Rng;

/// Stochastic volatility model:
/// `x_t ~ N(φ x_{t-1}, σ²)`, `y_t ~ N(0, exp(x_t) τ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Svm {
    pub phi: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl Svm {
    pub fn new(phi: f64, sigma: f64, tau: f64) -> Result<Self> {
        if !phi.is_finite() {
            return Err(Error::domain("phi must be finite"));
        }
        check_positive("sigma", sigma)?;
        check_positive("tau", tau)?;
        Ok(Svm { phi, sigma, tau })
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (1.0 - self.phi * self.phi)
    }
}

impl StateSpaceModel for Svm {
    const KIND: ModelKind = ModelKind::Svm;

    fn initial_state(&self, rng: &mut Rng) -> LatentState {
        LatentState::scalar(self.stationary_variance().sqrt() * std_normal(rng))
    }

    fn sample_transition(&self, prev: &LatentState, rng: &mut Rng) -> LatentState {
        LatentState::scalar(self.phi * prev.x + self.sigma * std_normal(rng))
    }

    fn sample_emission(&self, x: &LatentState, rng: &mut Rng) -> f64 {
        (0.5 * x.x).exp() * self.tau * std_normal(rng)
    }

    fn transition_logpdf(&self, prev: &LatentState, x: &LatentState) -> Result<f64> {
        Ok(normal_logpdf(x.x, self.phi * prev.x, self.sigma * self.sigma))
    }

    fn emission_logpdf(&self, x: &LatentState, y: f64) -> f64 {
        // log N(y | 0, e^x τ²), kept in log space
        let log_var = x.x + 2.0 * self.tau.ln();
        -0.5 * (LN_2PI + log_var + y * y * (-log_var).exp())
    }

    fn supports_proposal(&self, kind: ProposalKind) -> bool {
        kind == ProposalKind::Prior
    }

    fn propose(
        &self,
        prev: &LatentState,
        y: f64,
        _kind: ProposalKind,
        rng: &mut Rng,
    ) -> (LatentState, f64) {
        let x = self.sample_transition(prev, rng);
        let lw = self.emission_logpdf(&x, y);
        (x, lw)
    }

    fn one_step_logpdf(&self, prev: &LatentState, y: f64, rng: &mut Rng) -> f64 {
        let x = self.sample_transition(prev, rng);
        self.emission_logpdf(&x, y)
    }

    fn add_complete_data_grad(
        &self,
        x: &LatentState,
        prev: &LatentState,
        y: f64,
        scale: f64,
        out: &mut [f64],
    ) {
        let (s2, t2) = (self.sigma * self.sigma, self.tau * self.tau);
        let r = x.x - self.phi * prev.x;
        out[0] += scale * r * prev.x / s2;
        out[1] += scale * (s2 - r * r) / self.sigma;
        out[2] += scale * (t2 - y * y * (-x.x).exp()) / self.tau;
    }
}
