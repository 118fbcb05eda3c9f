use serde::{Deserialize, Serialize};

use super::{check_positive, std_normal, LatentState, ModelKind, StateSpaceModel};
use crate::error::{Error, Result};
use crate::math::normal_logpdf;
use crate::particle::ProposalKind;
use crate::rng::Rng;

/// Linear Gaussian SSM:
/// `x_t ~ N(φ x_{t-1}, σ²)`, `y_t ~ N(x_t, τ²)`, `x_0 ~ N(0, σ²/(1−φ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lgssm {
    pub phi: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl Lgssm {
    pub fn new(phi: f64, sigma: f64, tau: f64) -> Result<Self> {
        if !phi.is_finite() {
            return Err(Error::domain("phi must be finite"));
        }
        check_positive("sigma", sigma)?;
        check_positive("tau", tau)?;
        Ok(Lgssm { phi, sigma, tau })
    }

    /// Stationary variance of the latent chain, σ²/(1−φ²).
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (1.0 - self.phi * self.phi)
    }
}

impl StateSpaceModel for Lgssm {
    const KIND: ModelKind = ModelKind::Lgssm;

    fn initial_state(&self, rng: &mut Rng) -> LatentState {
        LatentState::scalar(self.stationary_variance().sqrt() * std_normal(rng))
    }

    fn sample_transition(&self, prev: &LatentState, rng: &mut Rng) -> LatentState {
        LatentState::scalar(self.phi * prev.x + self.sigma * std_normal(rng))
    }

    fn sample_emission(&self, x: &LatentState, rng: &mut Rng) -> f64 {
        x.x + self.tau * std_normal(rng)
    }

    fn transition_logpdf(&self, prev: &LatentState, x: &LatentState) -> Result<f64> {
        Ok(normal_logpdf(x.x, self.phi * prev.x, self.sigma * self.sigma))
    }

    fn emission_logpdf(&self, x: &LatentState, y: f64) -> f64 {
        normal_logpdf(y, x.x, self.tau * self.tau)
    }

    fn supports_proposal(&self, _kind: ProposalKind) -> bool {
        true
    }

    fn propose(
        &self,
        prev: &LatentState,
        y: f64,
        kind: ProposalKind,
        rng: &mut Rng,
    ) -> (LatentState, f64) {
        match kind {
            ProposalKind::Prior => {
                let x = self.sample_transition(prev, rng);
                let lw = self.emission_logpdf(&x, y);
                (x, lw)
            }
            ProposalKind::OptimalInstrumental => {
                let (s2, t2) = (self.sigma * self.sigma, self.tau * self.tau);
                let m = self.phi * prev.x;
                let mean = (t2 * m + s2 * y) / (s2 + t2);
                let var = s2 * t2 / (s2 + t2);
                let x = LatentState::scalar(mean + var.sqrt() * std_normal(rng));
                (x, normal_logpdf(y, m, s2 + t2))
            }
        }
    }

    fn one_step_logpdf(&self, prev: &LatentState, y: f64, _rng: &mut Rng) -> f64 {
        normal_logpdf(y, self.phi * prev.x, self.sigma * self.sigma + self.tau * self.tau)
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
        let e = y - x.x;
        out[0] += scale * r * prev.x / s2;
        out[1] += scale * (s2 - r * r) / self.sigma;
        out[2] += scale * (t2 - e * e) / self.tau;
    }
}
