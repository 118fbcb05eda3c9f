use rand::Rng as _;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{check_positive, std_normal, LatentState, ModelKind, StateSpaceModel};
use crate::error::{Error, Result};
use crate::math::{beta_logpdf, expit, inv_gamma_logpdf, logit, normal_logpdf};
use crate::particle::ProposalKind;
use crate::rng::Rng;

// Prior: μ ~ U(0, 2), (φ+1)/2 ~ Beta(10, 1.5), (λ+1)/2 ~ Beta(20, 1.5),
// τ² ~ IG(2, scale 0.5).
const MU_MAX: f64 = 2.0;
const PHI_BETA: (f64, f64) = (10.0, 1.5);
const LAMBDA_BETA: (f64, f64) = (20.0, 1.5);
const TAU2_IG: (f64, f64) = (2.0, 0.5);

/// GARCH(1,1) with observation noise:
/// `σ_t² = α + β x_{t-1}² + γ σ_{t-1}²`, `x_t ~ N(0, σ_t²)`, `y_t ~ N(x_t, τ²)`,
/// stored as `(μ, φ, λ)` with `α = μ(1−φ)`, `β = φλ`, `γ = φ(1−λ)`.
///
/// The state is augmented with σ_t²; the initial state has σ_0² at the
/// stationary value `α/(1−β−γ) = μ` and `x_0 ~ N(0, σ_0²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Garch {
    pub mu: f64,
    pub phi: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl Garch {
    pub fn new(mu: f64, phi: f64, lambda: f64, tau: f64) -> Result<Self> {
        check_positive("mu", mu)?;
        check_positive("tau", tau)?;
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::domain(format!("GARCH phi must lie in (0, 1), got {phi}")));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::domain(format!("GARCH lambda must lie in (0, 1), got {lambda}")));
        }
        Ok(Garch { mu, phi, lambda, tau })
    }

    /// From the textbook parametrization; requires α, β, γ > 0 and β + γ < 1.
    pub fn from_abg(alpha: f64, beta: f64, gamma: f64, tau: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_positive("beta", beta)?;
        check_positive("gamma", gamma)?;
        let phi = beta + gamma;
        if phi >= 1.0 {
            return Err(Error::domain(format!("beta + gamma = {phi} must be < 1")));
        }
        Garch::new(alpha / (1.0 - phi), phi, beta / phi, tau)
    }

    /// `(α, β, γ)`.
    pub fn abg(&self) -> (f64, f64, f64) {
        (
            self.mu * (1.0 - self.phi),
            self.phi * self.lambda,
            self.phi * (1.0 - self.lambda),
        )
    }

    pub(super) fn from_unconstrained(u: &[f64]) -> Result<Self> {
        Garch::new(u[0].exp(), expit(u[1]), expit(u[2]), u[3])
    }

    pub(super) fn unconstrained(&self) -> [f64; 4] {
        [self.mu.ln(), logit(self.phi), logit(self.lambda), self.tau]
    }

    /// σ_t² given the previous augmented state.
    #[inline]
    pub fn next_variance(&self, prev: &LatentState) -> f64 {
        let s_prev = prev.aux_variance.unwrap_or(self.mu);
        self.mu * (1.0 - self.phi)
            + self.phi * (self.lambda * prev.x * prev.x + (1.0 - self.lambda) * s_prev)
    }

    fn in_support(&self) -> bool {
        self.mu > 0.0
            && self.mu < MU_MAX
            && self.phi > 0.0
            && self.phi < 1.0
            && self.lambda > 0.0
            && self.lambda < 1.0
            && self.tau > 0.0
    }

    pub(super) fn log_prior(&self) -> Result<f64> {
        if !self.in_support() {
            return Err(Error::domain(format!("GARCH parameters outside prior support: {self:?}")));
        }
        let (phi, lam, tau) = (self.phi, self.lambda, self.tau);
        // μ uniform: density 1/2 times Jacobian μ of log μ
        let lp_mu = -(MU_MAX.ln()) + self.mu.ln();
        let lp_phi = beta_logpdf((phi + 1.0) / 2.0, PHI_BETA.0, PHI_BETA.1) - 2f64.ln()
            + (phi * (1.0 - phi)).ln();
        let lp_lam = beta_logpdf((lam + 1.0) / 2.0, LAMBDA_BETA.0, LAMBDA_BETA.1) - 2f64.ln()
            + (lam * (1.0 - lam)).ln();
        let lp_tau = inv_gamma_logpdf(tau * tau, TAU2_IG.0, TAU2_IG.1) + (2.0 * tau).ln();
        Ok(lp_mu + lp_phi + lp_lam + lp_tau)
    }

    pub(super) fn log_prior_grad(&self) -> Result<Vec<f64>> {
        if !self.in_support() {
            return Err(Error::domain(format!("GARCH parameters outside prior support: {self:?}")));
        }
        let shifted_beta = |p: f64, (a, b): (f64, f64)| {
            let d = (a - 1.0) / (1.0 + p) - (b - 1.0) / (1.0 - p);
            p * (1.0 - p) * d + (1.0 - 2.0 * p)
        };
        let tau = self.tau;
        let (a, b) = TAU2_IG;
        Ok(vec![
            1.0,
            shifted_beta(self.phi, PHI_BETA),
            shifted_beta(self.lambda, LAMBDA_BETA),
            -(2.0 * (a + 1.0) - 1.0) / tau + 2.0 * b / (tau * tau * tau),
        ])
    }

    pub(super) fn sample_prior(rng: &mut Rng) -> Result<Self> {
        let beta_phi = Beta::new(PHI_BETA.0, PHI_BETA.1).expect("valid beta");
        let beta_lam = Beta::new(LAMBDA_BETA.0, LAMBDA_BETA.1).expect("valid beta");
        // 1/τ² ~ Gamma(shape 2, rate 0.5)
        let prec = Gamma::new(TAU2_IG.0, 1.0 / TAU2_IG.1).expect("valid gamma");
        for _ in 0..10_000 {
            let mu = MU_MAX * rng.random::<f64>();
            let phi = 2.0 * beta_phi.sample(rng) - 1.0;
            let lambda = 2.0 * beta_lam.sample(rng) - 1.0;
            let tau = (1.0 / prec.sample(rng)).sqrt();
            if let Ok(g) = Garch::new(mu, phi, lambda, tau) {
                if g.in_support() {
                    return Ok(g);
                }
            }
        }
        Err(Error::Numeric("could not draw GARCH parameters inside the prior support".into()))
    }
}

impl StateSpaceModel for Garch {
    const KIND: ModelKind = ModelKind::Garch;

    fn initial_state(&self, rng: &mut Rng) -> LatentState {
        LatentState::with_variance(self.mu.sqrt() * std_normal(rng), self.mu)
    }

    fn sample_transition(&self, prev: &LatentState, rng: &mut Rng) -> LatentState {
        let s = self.next_variance(prev);
        LatentState::with_variance(s.sqrt() * std_normal(rng), s)
    }

    fn sample_emission(&self, x: &LatentState, rng: &mut Rng) -> f64 {
        x.x + self.tau * std_normal(rng)
    }

    fn transition_logpdf(&self, prev: &LatentState, x: &LatentState) -> Result<f64> {
        if prev.aux_variance.is_none() {
            return Err(Error::Contract("previous GARCH state lacks its conditional variance".into()));
        }
        let s = self.next_variance(prev);
        match x.aux_variance {
            Some(v) if (v - s).abs() <= 1e-10 * s.abs().max(1.0) => Ok(normal_logpdf(x.x, 0.0, s)),
            other => Err(Error::Contract(format!(
                "GARCH conditional variance {other:?} does not match the recursion value {s}"
            ))),
        }
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
                let s = self.next_variance(prev);
                let t2 = self.tau * self.tau;
                let mean = s * y / (s + t2);
                let var = s * t2 / (s + t2);
                let x = LatentState::with_variance(mean + var.sqrt() * std_normal(rng), s);
                (x, normal_logpdf(y, 0.0, s + t2))
            }
        }
    }

    fn one_step_logpdf(&self, prev: &LatentState, y: f64, _rng: &mut Rng) -> f64 {
        normal_logpdf(y, 0.0, self.next_variance(prev) + self.tau * self.tau)
    }

    fn add_complete_data_grad(
        &self,
        x: &LatentState,
        prev: &LatentState,
        y: f64,
        scale: f64,
        out: &mut [f64],
    ) {
        let s_prev = prev.aux_variance.unwrap_or(self.mu);
        let x2_prev = prev.x * prev.x;
        let s = self.next_variance(prev);
        let c = (x.x * x.x - s) / (2.0 * s * s);
        let (mu, phi, lam, tau) = (self.mu, self.phi, self.lambda, self.tau);
        let e = y - x.x;
        out[0] += scale * c * (1.0 - phi) * mu;
        out[1] += scale * c * (lam * x2_prev + (1.0 - lam) * s_prev - mu) * phi * (1.0 - phi);
        out[2] += scale * c * phi * (x2_prev - s_prev) * lam * (1.0 - lam);
        out[3] += scale * (e * e - tau * tau) / (tau * tau * tau);
    }
}
