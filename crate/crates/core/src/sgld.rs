//! Buffered PF-SGLD.
//!
//! Each iteration draws a fresh subsequence, estimates the gradient of the
//! loglikelihood over its buffered window and takes a Langevin step
//! `θ' = θ + ε(g + ∇ log p(θ)) + N(0, 2ε)` in unconstrained coordinates.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{EstimatorConfig, EstimatorKind, GradientEstimate};
use crate::model::{std_normal, ModelKind, ModelParams};
use crate::rng::Rng;

/// Stepsizes searched by the experiment drivers.
pub const EPS_GRID: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

/// Noise redraws before a step that leaves the support is abandoned.
pub const MAX_SUPPORT_REDRAWS: usize = 100;

/// Modeled seconds per particle propagation for [`ClockMode::Work`].
pub const WORK_SECONDS_PER_PARTICLE_STEP: f64 = 1e-7;

/// How the configured stepsize maps to the one used in the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScaling {
    /// `ε` is used as given.
    Raw,
    /// `ε / T`, with `T` the total number of training observations.
    #[default]
    PerObservation,
}

/// Source of the `wall_time_s` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Elapsed time measured with a monotonic clock.
    #[default]
    Measured,
    /// Deterministic cost model: particle propagations × a nominal unit.
    Work,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    pub eps: f64,
    pub eps_scaling: StepScaling,
    /// Number of iterations `K`.
    pub iterations: usize,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    pub burnin: usize,
    pub thin: usize,
    /// Consecutive degenerate filter passes tolerated before aborting.
    pub max_degenerate: usize,
    /// `false` turns the sampler into noisy-gradient ascent (test hook).
    pub inject_noise: bool,
    pub clock: ClockMode,
}

impl SgldConfig {
    pub fn preset(kind: EstimatorKind, eps: f64, iterations: usize, seed: u64) -> Self {
        SgldConfig {
            eps,
            eps_scaling: StepScaling::PerObservation,
            iterations,
            estimator: EstimatorConfig::preset(kind),
            seed,
            burnin: iterations / 2,
            thin: 1,
            max_degenerate: 10,
            inject_noise: true,
            clock: ClockMode::Measured,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(Error::Config(format!("stepsize must be positive, got {}", self.eps)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burnin >= self.iterations {
            return Err(Error::Config(format!(
                "burnin {} must be below the iteration count {}",
                self.burnin, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.estimator.particles == Some(0) || self.estimator.particles == Some(1) {
            return Err(Error::Config("need at least 2 particles".into()));
        }
        Ok(())
    }

    /// Stepsize used in the update for `n_obs` training observations.
    pub fn effective_eps(&self, n_obs: usize) -> f64 {
        match self.eps_scaling {
            StepScaling::Raw => self.eps,
            StepScaling::PerObservation => self.eps / n_obs.max(1) as f64,
        }
    }
}

/// Result of one Langevin step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub params: ModelParams,
    /// All noise redraws left the support; `params` is the previous value.
    pub rejected: bool,
}

/// One SGLD update with the given (already scaled) stepsize.
///
/// Proposals outside the prior support or the stationarity region get fresh
/// noise up to [`MAX_SUPPORT_REDRAWS`] times; after that the step is
/// abandoned and the old parameters kept.
pub fn sgld_step(
    params: &ModelParams,
    grad: &[f64],
    eps: f64,
    inject_noise: bool,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    if grad.len() != params.dim() {
        return Err(Error::domain(format!(
            "gradient has {} coordinates, model has {}",
            grad.len(),
            params.dim()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("stochastic gradient is not finite".into()));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::domain(format!("stepsize must be nonnegative, got {eps}")));
    }
    if eps == 0.0 {
        return Ok(StepOutcome {
            params: *params,
            rejected: false,
        });
    }
    let u = params.unconstrained();
    let prior = params.log_prior_grad()?;
    let drift: Vec<f64> = u
        .iter()
        .zip(grad.iter().zip(&prior))
        .map(|(u, (g, p))| u + eps * (g + p))
        .collect();
    let sd = (2.0 * eps).sqrt();
    let attempts = if inject_noise { MAX_SUPPORT_REDRAWS } else { 1 };
    for _ in 0..attempts {
        let cand: Vec<f64> = if inject_noise {
            drift.iter().map(|d| d + sd * std_normal(rng)).collect()
        } else {
            drift.clone()
        };
        if let Ok(p) = ModelParams::from_unconstrained(params.kind(), &cand) {
            if p.is_admissible() {
                return Ok(StepOutcome {
                    params: p,
                    rejected: false,
                });
            }
        }
    }
    Ok(StepOutcome {
        params: *params,
        rejected: true,
    })
}

/// A recorded SGLD run. Entry `k` holds the state after step `k + 1` and the
/// gradient that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub kind: ModelKind,
    /// Unconstrained coordinates.
    pub samples: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
    pub eps: Vec<f64>,
    /// Cumulative seconds at the end of each step.
    pub wall_time: Vec<f64>,
    pub rejected_steps: usize,
}

impl Chain {
    pub fn new(kind: ModelKind) -> Self {
        Chain {
            kind,
            samples: Vec::new(),
            grads: Vec::new(),
            eps: Vec::new(),
            wall_time: Vec::new(),
            rejected_steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn params_at(&self, k: usize) -> Result<ModelParams> {
        ModelParams::from_unconstrained(self.kind, &self.samples[k])
    }

    /// Samples kept after dropping `burnin` and keeping every `thin`-th.
    pub fn retained(&self, burnin: usize, thin: usize) -> Result<Vec<usize>> {
        if burnin >= self.len() {
            return Err(Error::domain(format!(
                "burnin {burnin} leaves nothing of a chain of length {}",
                self.len()
            )));
        }
        Ok((burnin..self.len()).step_by(thin.max(1)).collect())
    }

    /// Natural-coordinate samples.
    pub fn natural_samples(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.len()).map(|k| self.params_at(k).map(|p| p.natural())).collect()
    }

    pub fn header(kind: ModelKind) -> Vec<String> {
        let mut h = vec!["step".to_string(), "wall_time_s".to_string()];
        h.extend(kind.natural_names().iter().map(|s| s.to_string()));
        h.extend(kind.unconstrained_names().iter().map(|s| format!("grad_{s}")));
        h.push("eps".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Chain::header(self.kind))?;
        for k in 0..self.len() {
            let mut row = vec![(k + 1).to_string(), fmt_f64(self.wall_time[k])];
            row.extend(self.params_at(k)?.natural().iter().map(|v| fmt_f64(*v)));
            row.extend(self.grads[k].iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(self.eps[k]));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<chain csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(kind: ModelKind, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let expected = Chain::header(kind);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != expected {
            return Err(Error::data(
                None,
                format!("chain header {header:?} does not match {kind} layout {expected:?}"),
            ));
        }
        let d = kind.dim();
        let mut chain = Chain::new(kind);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::data(Some(i), format!("bad number: {e}")))?;
            let p = ModelParams::from_natural(kind, &v[2..2 + d])
                .map_err(|e| Error::data(Some(i), e.to_string()))?;
            chain.wall_time.push(v[1]);
            chain.samples.push(p.unconstrained());
            chain.grads.push(v[2 + d..2 + 2 * d].to_vec());
            chain.eps.push(v[2 + 2 * d]);
        }
        Ok(chain)
    }

    pub fn load(kind: ModelKind, path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Chain::read_csv(kind, std::io::BufReader::new(f))
    }
}

/// Shortest round-trip decimal form.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Runs `config.iterations` SGLD steps from `params0` on `segments`.
pub fn run_chain(
    params0: &ModelParams,
    segments: &[Vec<f64>],
    config: &SgldConfig,
    rng: &mut Rng,
) -> Result<Chain> {
    config.validate()?;
    params0.check_stationary()?;
    let n_obs: usize = segments.iter().map(Vec::len).sum();
    let eps = config.effective_eps(n_obs);
    let work_per_step = config.estimator.window_cost(segments) as f64
        * config.estimator.particles.unwrap_or(1) as f64
        * WORK_SECONDS_PER_PARTICLE_STEP;
    let mut chain = Chain::new(params0.kind());
    let mut params = *params0;
    let start = Instant::now();
    let mut work_clock = 0.0;
    for k in 0..config.iterations {
        let est = estimate_with_retries(&params, segments, config, k, rng)?;
        let out = sgld_step(&params, &est.grad, eps, config.inject_noise, rng)?;
        if out.rejected {
            chain.rejected_steps += 1;
            log::debug!("step {}: no admissible proposal, keeping previous state", k + 1);
        }
        params = out.params;
        work_clock += work_per_step;
        chain.samples.push(params.unconstrained());
        chain.grads.push(est.grad);
        chain.eps.push(eps);
        chain.wall_time.push(match config.clock {
            ClockMode::Measured => start.elapsed().as_secs_f64(),
            ClockMode::Work => work_clock,
        });
    }
    Ok(chain)
}

fn estimate_with_retries(
    params: &ModelParams,
    segments: &[Vec<f64>],
    config: &SgldConfig,
    k: usize,
    rng: &mut Rng,
) -> Result<GradientEstimate> {
    let mut failures = 0;
    loop {
        match config.estimator.estimate(params, segments, rng) {
            Err(Error::Degenerate { t }) => {
                failures += 1;
                log::debug!("step {}: degenerate filter at window index {t}", k + 1);
                if failures > config.max_degenerate {
                    return Err(Error::Numeric(format!(
                        "particle filter degenerate {failures} times in a row at step {} \
                         (last at window index {t}, params {:?})",
                        k + 1,
                        params.natural()
                    )));
                }
            }
            other => return other,
        }
    }
}

/// Coordinate-wise mean of the retained samples, in natural coordinates.
pub fn posterior_mean(chain: &Chain, burnin: usize, thin: usize) -> Result<Vec<f64>> {
    let idx = chain.retained(burnin, thin)?;
    let mut mean = vec![0.0; chain.kind.dim()];
    for (n, &k) in idx.iter().enumerate() {
        let p = chain.params_at(k)?.natural();
        // running mean
        for (m, v) in mean.iter_mut().zip(&p) {
            *m += (v - *m) / (n + 1) as f64;
        }
    }
    Ok(mean)
}
