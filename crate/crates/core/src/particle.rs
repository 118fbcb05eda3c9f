//! Sequential importance resampling with pairwise statistics.
//!
//! Every step resamples (multinomial by default), propagates through a
//! proposal, reweights in log space and updates the running statistics
//! `H_t^(i) = H_{t-1}^(a_i) + h_t(x_t^(i), x_{t-1}^(a_i))`. Only the running
//! sums are stored, never particle genealogies. The estimate returned by
//! [`run_filter`] is `Σ_i w_T^(i) H_T^(i)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::logsumexp;
use crate::model::{with_model, LatentState, ModelParams, StateSpaceModel};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// Bootstrap filter: propose from the transition density.
    Prior,
    /// `q(x_t | x_{t-1}, y_t) = p(x_t | x_{t-1}, y_t)`; LGSSM and GARCH only.
    OptimalInstrumental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingKind {
    #[default]
    Multinomial,
    Stratified,
    Residual,
}

/// Knobs shared by every filter pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub n_particles: usize,
    pub proposal: ProposalKind,
    pub resampling: ResamplingKind,
}

impl FilterOptions {
    /// `n` particles with the model's default proposal and multinomial resampling.
    pub fn new(params: &ModelParams, n: usize) -> Self {
        FilterOptions {
            n_particles: n,
            proposal: params.kind().default_proposal(),
            resampling: ResamplingKind::Multinomial,
        }
    }
}

/// Indexed pairwise statistic `h_t(x_t, x_{t-1})`, `t` being the position
/// within the filtered window.
pub trait PairwiseStatistic: Sync {
    fn dim(&self) -> usize;

    /// Adds `h_t(x, prev)` to `out`.
    fn add<M: StateSpaceModel>(
        &self,
        model: &M,
        t: usize,
        x: &LatentState,
        prev: &LatentState,
        y: f64,
        out: &mut [f64],
    );
}

/// `h_t ≡ 0` with a given dimension (0 for pure likelihood passes).
#[derive(Debug, Clone, Copy)]
pub struct ZeroStatistic(pub usize);

impl PairwiseStatistic for ZeroStatistic {
    fn dim(&self) -> usize {
        self.0
    }

    fn add<M: StateSpaceModel>(&self, _: &M, _: usize, _: &LatentState, _: &LatentState, _: f64, _: &mut [f64]) {}
}

/// `h_t = weight_t · ∇ log p(x_t, y_t | x_{t-1}, θ)`; zero weights are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherStatistic {
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl FisherStatistic {
    /// Unit weights over a window of length `len`.
    pub fn full(params: &ModelParams, len: usize) -> Self {
        FisherStatistic {
            dim: params.dim(),
            weights: vec![1.0; len],
        }
    }
}

impl PairwiseStatistic for FisherStatistic {
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn add<M: StateSpaceModel>(
        &self,
        model: &M,
        t: usize,
        x: &LatentState,
        prev: &LatentState,
        y: f64,
        out: &mut [f64],
    ) {
        let w = self.weights[t];
        if w != 0.0 {
            model.add_complete_data_grad(x, prev, y, w, out);
        }
    }
}

/// A weighted particle population with per-particle running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub particles: Vec<LatentState>,
    /// Normalized: `logsumexp(log_weights) = 0`.
    pub log_weights: Vec<f64>,
    /// Row-major `N × dim` running statistics.
    pub stats: Vec<f64>,
    pub dim: usize,
    /// Ancestors drawn by the latest resampling (identity before the first step).
    pub ancestors: Vec<usize>,
    /// Running estimate of `log p(y_{1:t})`.
    pub log_marginal: f64,
    /// Number of observations assimilated.
    pub t: usize,
}

impl ParticleCloud {
    /// `n` draws from the model's stationary initial law, equal weights, zero statistics.
    pub fn initialize(params: &ModelParams, n: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        params.check_stationary()?;
        Ok(with_model!(params, m => ParticleCloud::init_with(m, n, dim, rng)))
    }

    fn init_with<M: StateSpaceModel>(model: &M, n: usize, dim: usize, rng: &mut Rng) -> Self {
        let lw = -(n as f64).ln();
        ParticleCloud {
            particles: (0..n).map(|_| model.initial_state(rng)).collect(),
            log_weights: vec![lw; n],
            stats: vec![0.0; n * dim],
            dim,
            ancestors: (0..n).collect(),
            log_marginal: 0.0,
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn stats_of(&self, i: usize) -> &[f64] {
        &self.stats[i * self.dim..(i + 1) * self.dim]
    }

    /// `Σ_i w^(i) H^(i)`.
    pub fn weighted_stats(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for (i, lw) in self.log_weights.iter().enumerate() {
            let w = lw.exp();
            if w == 0.0 {
                continue;
            }
            for (acc, s) in h.iter_mut().zip(self.stats_of(i)) {
                *acc += w * s;
            }
        }
        h
    }

    /// One SIR iteration in place; `t` indexes `h` within the window.
    #[allow(clippy::too_many_arguments)]
    fn advance<M: StateSpaceModel, H: PairwiseStatistic>(
        &mut self,
        model: &M,
        y: f64,
        t: usize,
        h: &H,
        opts: &FilterOptions,
        rng: &mut Rng,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let n = self.len();
        let d = self.dim;
        resample_into(&self.log_weights, opts.resampling, rng, &mut self.ancestors)?;
        scratch.particles.clear();
        scratch.raw.clear();
        scratch.stats.clear();
        scratch.stats.resize(n * d, 0.0);
        for (i, &a) in self.ancestors.iter().enumerate() {
            let prev = &self.particles[a];
            let (x, lw) = model.propose(prev, y, opts.proposal, rng);
            if d > 0 {
                let row = &mut scratch.stats[i * d..(i + 1) * d];
                row.copy_from_slice(&self.stats[a * d..(a + 1) * d]);
                h.add(model, t, &x, prev, y, row);
            }
            scratch.particles.push(x);
            scratch.raw.push(if lw.is_nan() { f64::NEG_INFINITY } else { lw });
        }
        let lse = logsumexp(&scratch.raw);
        if !lse.is_finite() {
            return Err(Error::Degenerate { t: self.t + 1 });
        }
        std::mem::swap(&mut self.particles, &mut scratch.particles);
        std::mem::swap(&mut self.stats, &mut scratch.stats);
        self.log_weights.clear();
        self.log_weights.extend(scratch.raw.iter().map(|r| r - lse));
        self.log_marginal += lse - (n as f64).ln();
        self.t += 1;
        Ok(())
    }
}

#[derive(Default)]
struct Scratch {
    particles: Vec<LatentState>,
    raw: Vec<f64>,
    stats: Vec<f64>,
}

/// Draws `N` ancestor indices with `E[#offspring of i] = N·w_i`.
pub fn resample(log_weights: &[f64], kind: ResamplingKind, rng: &mut Rng) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(log_weights.len());
    resample_into(log_weights, kind, rng, &mut out)?;
    Ok(out)
}

fn resample_into(
    log_weights: &[f64],
    kind: ResamplingKind,
    rng: &mut Rng,
    out: &mut Vec<usize>,
) -> Result<()> {
    let n = log_weights.len();
    out.clear();
    if n == 0 {
        return Ok(());
    }
    if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::Numeric("non-finite log-weight passed to resampling".into()));
    }
    let w: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
    let total: f64 = w.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numeric(format!("resampling weights sum to {total}")));
    }
    let nf = n as f64;
    match kind {
        ResamplingKind::Multinomial => {
            // Sorted uniforms from normalized exponential spacings.
            let mut e = Vec::with_capacity(n + 1);
            let mut acc = 0.0;
            for _ in 0..=n {
                acc += -(1.0 - rng.random::<f64>()).ln();
                e.push(acc);
            }
            let scale = total / acc;
            walk_cdf(&w, e[..n].iter().map(|v| v * scale), out);
        }
        ResamplingKind::Stratified => {
            let points: Vec<f64> = (0..n)
                .map(|i| (i as f64 + rng.random::<f64>()) / nf * total)
                .collect();
            walk_cdf(&w, points.into_iter(), out);
        }
        ResamplingKind::Residual => {
            let mut residual = Vec::with_capacity(n);
            for (i, &wi) in w.iter().enumerate() {
                let expected = nf * wi / total;
                let copies = expected.floor() as usize;
                out.extend(std::iter::repeat_n(i, copies));
                residual.push(expected - copies as f64);
            }
            let remaining = n.saturating_sub(out.len());
            if remaining > 0 {
                let rtotal: f64 = residual.iter().sum();
                let mut e = Vec::with_capacity(remaining + 1);
                let mut acc = 0.0;
                for _ in 0..=remaining {
                    acc += -(1.0 - rng.random::<f64>()).ln();
                    e.push(acc);
                }
                let scale = rtotal / acc;
                let mut extra = Vec::with_capacity(remaining);
                walk_cdf(&residual, e[..remaining].iter().map(|v| v * scale), &mut extra);
                out.extend(extra);
                out.sort_unstable();
            }
            out.truncate(n);
        }
    }
    Ok(())
}

/// Maps sorted points in `[0, Σw)` to the indices of the CDF cells holding them.
fn walk_cdf(w: &[f64], points: impl Iterator<Item = f64>, out: &mut Vec<usize>) {
    let last_positive = w.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    let mut j = 0;
    let mut cum = w[0];
    for u in points {
        while u >= cum && j < last_positive {
            j += 1;
            cum += w[j];
        }
        out.push(j);
    }
}

/// One SIR step returning a new cloud (see the module docs).
pub fn step<H: PairwiseStatistic>(
    cloud: &ParticleCloud,
    params: &ModelParams,
    y: f64,
    t: usize,
    h: &H,
    opts: &FilterOptions,
    rng: &mut Rng,
) -> Result<ParticleCloud> {
    check_options(params, opts)?;
    let mut next = cloud.clone();
    let mut scratch = Scratch::default();
    with_model!(params, m => next.advance(m, y, t, h, opts, rng, &mut scratch))?;
    Ok(next)
}

/// Output of a full filter pass.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `Σ_i w_T^(i) H_T^(i)`.
    pub h: Vec<f64>,
    pub loglik: f64,
    pub cloud: ParticleCloud,
}

/// Runs the filter over `y` starting from the stationary initial law and
/// returns the weighted statistic and the log-marginal estimate.
pub fn run_filter<H: PairwiseStatistic>(
    params: &ModelParams,
    y: &[f64],
    h: &H,
    opts: &FilterOptions,
    rng: &mut Rng,
) -> Result<FilterOutput> {
    if y.is_empty() {
        return Err(Error::domain("run_filter needs a nonempty window"));
    }
    check_options(params, opts)?;
    params.check_stationary()?;
    with_model!(params, m => run_filter_with(m, y, h, opts, rng))
}

fn run_filter_with<M: StateSpaceModel, H: PairwiseStatistic>(
    model: &M,
    y: &[f64],
    h: &H,
    opts: &FilterOptions,
    rng: &mut Rng,
) -> Result<FilterOutput> {
    let mut cloud = ParticleCloud::init_with(model, opts.n_particles, h.dim(), rng);
    let mut scratch = Scratch::default();
    for (t, &yt) in y.iter().enumerate() {
        cloud.advance(model, yt, t, h, opts, rng, &mut scratch)?;
    }
    Ok(FilterOutput {
        h: cloud.weighted_stats(),
        loglik: cloud.log_marginal,
        cloud,
    })
}

fn check_options(params: &ModelParams, opts: &FilterOptions) -> Result<()> {
    if opts.n_particles < 2 {
        return Err(Error::domain(format!("need at least 2 particles, got {}", opts.n_particles)));
    }
    let ok = with_model!(params, m => m.supports_proposal(opts.proposal));
    if !ok {
        return Err(Error::Unsupported {
            model: params.kind().name(),
            what: format!("proposal {:?}", opts.proposal),
        });
    }
    Ok(())
}

/// How per-particle predictive densities are combined at each time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveForm {
    /// `log Σ_i w^(i) p(y | x^(i))`: consistent for `log p(y_t | y_{<t})`.
    #[default]
    Mixture,
    /// `Σ_i w^(i) log p(y | x^(i))`: a lower bound by Jensen's inequality.
    ExpectedLog,
}

/// Heldout loglikelihood `Σ_t log p(y_t | y_{<t}, θ)` on a test sequence.
pub fn heldout_loglik(
    params: &ModelParams,
    y_test: &[f64],
    opts: &FilterOptions,
    form: PredictiveForm,
    rng: &mut Rng,
) -> Result<f64> {
    predictive_pass(params, y_test, 1, opts, form, rng)
}

/// `r`-step-ahead predictive loglikelihood: `Σ_t log p(y_{t+r-1} | y_{<t}, θ)`
/// over the `T − r + 1` valid `t`; `r = 1` is the heldout loglikelihood.
/// The `r − 1` intermediate transitions are sampled per particle.
pub fn predictive_loglik(
    params: &ModelParams,
    y_test: &[f64],
    r: usize,
    opts: &FilterOptions,
    form: PredictiveForm,
    rng: &mut Rng,
) -> Result<f64> {
    if r == 0 {
        return Err(Error::domain("prediction horizon r must be at least 1"));
    }
    if y_test.len() < r {
        return Err(Error::domain(format!(
            "horizon r = {r} exceeds the test sequence length {}",
            y_test.len()
        )));
    }
    predictive_pass(params, y_test, r, opts, form, rng)
}

fn predictive_pass(
    params: &ModelParams,
    y: &[f64],
    r: usize,
    opts: &FilterOptions,
    form: PredictiveForm,
    rng: &mut Rng,
) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    check_options(params, opts)?;
    params.check_stationary()?;
    with_model!(params, m => predictive_with(m, y, r, opts, form, rng))
}

fn predictive_with<M: StateSpaceModel>(
    model: &M,
    y: &[f64],
    r: usize,
    opts: &FilterOptions,
    form: PredictiveForm,
    rng: &mut Rng,
) -> Result<f64> {
    let mut cloud = ParticleCloud::init_with(model, opts.n_particles, 0, rng);
    let mut scratch = Scratch::default();
    let mut terms = Vec::with_capacity(opts.n_particles);
    let mut total = 0.0;
    let n_terms = y.len() + 1 - r;
    for t in 0..n_terms {
        let target = y[t + r - 1];
        terms.clear();
        for p in &cloud.particles {
            let mut x = *p;
            for _ in 1..r {
                x = model.sample_transition(&x, rng);
            }
            terms.push(model.one_step_logpdf(&x, target, rng));
        }
        total += match form {
            PredictiveForm::Mixture => {
                let v: Vec<f64> = cloud.log_weights.iter().zip(&terms).map(|(w, l)| w + l).collect();
                logsumexp(&v)
            }
            PredictiveForm::ExpectedLog => cloud
                .log_weights
                .iter()
                .zip(&terms)
                .map(|(w, l)| w.exp() * l)
                .sum(),
        };
        if t + 1 < n_terms {
            cloud.advance(model, y[t], t, &ZeroStatistic(0), opts, rng, &mut scratch)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
