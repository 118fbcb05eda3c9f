//! Sample-quality diagnostics and the gradient bias harness.
//!
//! * Kernel Stein discrepancy with the inverse multiquadric kernel
//!   `K(θ, θ') = (1 + ‖θ − θ'‖²)^{-1/2}` (unit scale), on unconstrained
//!   coordinates, as a V-statistic over all sample pairs.
//! * Running-average MSE to known parameters.
//! * Replicated bias/MSE sweeps of the buffered gradient estimators.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gradient::{
    analytic_buffered_gradient, n_subsequences, nth_subsequence, pf_buffered_gradient,
    sample_subsequence, SubsequenceScheme, SubsequenceSpec,
};
use crate::kalman;
use crate::math::mean_sd;
use crate::model::ModelParams;
use crate::particle::{run_filter, FilterOptions, FisherStatistic, ProposalKind, ResamplingKind};
use crate::rng::{derive, Rng};
use crate::sgld::{fmt_f64, Chain, WORK_SECONDS_PER_PARTICLE_STEP};

/// IMQ kernel value and the derivatives entering the Stein kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImqTerms {
    pub k: f64,
    /// `∂K/∂θ_d`.
    pub d_first: Vec<f64>,
    /// `∂K/∂θ'_d`.
    pub d_second: Vec<f64>,
    /// `∂²K/∂θ_d∂θ'_d`.
    pub d_cross: Vec<f64>,
}

pub fn imq_kernel(a: &[f64], b: &[f64]) -> Result<ImqTerms> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("kernel arguments of dimension {} and {}", a.len(), b.len())));
    }
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let base = 1.0 + r2;
    let k = base.powf(-0.5);
    let k3 = k / base;
    let k5 = k3 / base;
    let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(ImqTerms {
        k,
        d_first: delta.iter().map(|d| -k3 * d).collect(),
        d_second: delta.iter().map(|d| k3 * d).collect(),
        d_cross: delta.iter().map(|d| k3 - 3.0 * d * d * k5).collect(),
    })
}

/// Per-coordinate Stein kernel
/// `K₀^d = ∂_d∂'_d K + ∂_d K·g_d(θ') + ∂'_d K·g_d(θ) + K·g_d(θ)·g_d(θ')`.
pub fn stein_kernel(a: &[f64], b: &[f64], ga: &[f64], gb: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    stein_kernel_into(a, b, ga, gb, &mut out);
    out
}

#[inline]
fn stein_kernel_into(a: &[f64], b: &[f64], ga: &[f64], gb: &[f64], acc: &mut [f64]) {
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let base = 1.0 + r2;
    let k = base.powf(-0.5);
    let k3 = k / base;
    let k5 = k3 / base;
    for c in 0..acc.len() {
        let delta = a[c] - b[c];
        acc[c] += k3 - 3.0 * delta * delta * k5 - k3 * delta * gb[c] + k3 * delta * ga[c] + k * ga[c] * gb[c];
    }
}

/// Samples with (estimated) scores of the target log density.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KsdInput {
    pub samples: Vec<Vec<f64>>,
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsdResult {
    /// Marginal discrepancy per coordinate.
    pub per_dim: Vec<f64>,
    /// Sum of the marginal discrepancies.
    pub total: f64,
}

/// `KSD = Σ_d sqrt(Σ_{i,j} K₀^d(θ_i, θ_j) / K̃²)`.
pub fn ksd(input: &KsdInput, exec: Execution) -> Result<KsdResult> {
    let n = input.samples.len();
    if n != input.scores.len() {
        return Err(Error::domain(format!("{n} samples but {} scores", input.scores.len())));
    }
    if n < 2 {
        return Err(Error::domain("KSD needs at least two samples"));
    }
    let d = input.samples[0].len();
    let finite = |v: &Vec<f64>| v.len() == d && v.iter().all(|x| x.is_finite());
    if !input.samples.iter().all(finite) || !input.scores.iter().all(finite) {
        return Err(Error::domain("KSD inputs must be finite and of equal dimension"));
    }
    let rows = exec.map(n, |i| {
        let mut acc = vec![0.0; d];
        for j in 0..n {
            stein_kernel_into(
                &input.samples[i],
                &input.samples[j],
                &input.scores[i],
                &input.scores[j],
                &mut acc,
            );
        }
        acc
    });
    let mut sums = vec![0.0; d];
    for row in rows {
        sums.iter_mut().zip(&row).for_each(|(s, r)| *s += r);
    }
    let n2 = (n * n) as f64;
    let per_dim: Vec<f64> = sums.iter().map(|s| (s / n2).max(0.0).sqrt()).collect();
    Ok(KsdResult {
        total: per_dim.iter().sum(),
        per_dim,
    })
}

/// Stochastic posterior scores `g(θ) + ∇ log p(θ)` at chain samples `idx`,
/// each from its own stream under `seed`.
pub fn score_estimates(
    chain: &Chain,
    idx: &[usize],
    segments: &[Vec<f64>],
    estimator: &crate::gradient::EstimatorConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    exec.try_map(idx.len(), |i| {
        let params = chain.params_at(idx[i])?;
        let mut rng = derive(seed, &[idx[i] as u64]);
        let mut g = estimator.estimate(&params, segments, &mut rng)?.grad;
        let prior = params.log_prior_grad()?;
        g.iter_mut().zip(&prior).for_each(|(a, p)| *a += p);
        Ok(g)
    })
}

/// `(θ̄_k − θ*)²` per coordinate for every step `k ≥ burnin`, where `θ̄_k` is
/// the running average of the natural-coordinate samples since `burnin`.
pub fn mse_to_truth(chain: &Chain, truth: &[f64], burnin: usize) -> Result<Vec<Vec<f64>>> {
    if truth.len() != chain.kind.dim() {
        return Err(Error::domain(format!(
            "truth has {} coordinates, {} has {}",
            truth.len(),
            chain.kind,
            chain.kind.dim()
        )));
    }
    let idx = chain.retained(burnin, 1)?;
    let mut sum = vec![0.0; truth.len()];
    let mut out = Vec::with_capacity(idx.len());
    for (n, &k) in idx.iter().enumerate() {
        let p = chain.params_at(k)?.natural();
        sum.iter_mut().zip(&p).for_each(|(s, v)| *s += v);
        let m = (n + 1) as f64;
        out.push(sum.iter().zip(truth).map(|(s, t)| (s / m - t).powi(2)).collect());
    }
    Ok(out)
}

/// One row of a KSD report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsdReportRow {
    pub method: String,
    pub param: String,
    pub log10_ksd_mean: f64,
    pub log10_ksd_sd: f64,
    pub n_chains: usize,
}

/// Mean and SD of `log₁₀ KSD` per method, per coordinate and in total.
/// Methods appear in first-seen order.
pub fn ksd_report(results: &[(String, KsdResult)], param_names: &[&str]) -> Vec<KsdReportRow> {
    let mut methods: Vec<&str> = Vec::new();
    for (m, _) in results {
        if !methods.contains(&m.as_str()) {
            methods.push(m);
        }
    }
    let mut rows = Vec::new();
    for method in methods {
        let runs: Vec<&KsdResult> = results.iter().filter(|(m, _)| m == method).map(|(_, r)| r).collect();
        let mut push = |param: &str, vals: Vec<f64>| {
            let (mean, sd) = mean_sd(&vals);
            rows.push(KsdReportRow {
                method: method.to_string(),
                param: param.to_string(),
                log10_ksd_mean: mean,
                log10_ksd_sd: sd,
                n_chains: vals.len(),
            });
        };
        for (d, name) in param_names.iter().enumerate() {
            push(name, runs.iter().map(|r| r.per_dim[d].log10()).collect());
        }
        push("total", runs.iter().map(|r| r.total.log10()).collect());
    }
    rows
}

pub fn write_ksd_report<W: Write>(rows: &[KsdReportRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "param", "log10_ksd_mean", "log10_ksd_sd", "n_chains"])?;
    for r in rows {
        out.write_record([
            r.method.clone(),
            r.param.clone(),
            fmt_f64(r.log10_ksd_mean),
            fmt_f64(r.log10_ksd_sd),
            r.n_chains.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<ksd report>", e))?;
    Ok(())
}

/// A cached high-accuracy gradient `g^PF(T, 0, N)` used as ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGradient {
    pub params: ModelParams,
    pub t_len: usize,
    pub n_particles: usize,
    pub reps: usize,
    pub seed: u64,
    pub grad: Vec<f64>,
    /// Monte Carlo standard error of `grad` over the `reps` runs.
    pub se: Vec<f64>,
}

/// Averages `reps` independent full-sequence filters with `n` particles.
pub fn compute_reference(
    params: &ModelParams,
    y: &[f64],
    n: usize,
    reps: usize,
    seed: u64,
    proposal: Option<ProposalKind>,
    exec: Execution,
) -> Result<ReferenceGradient> {
    if reps == 0 {
        return Err(Error::Config("reference needs at least one replicate".into()));
    }
    let opts = FilterOptions {
        n_particles: n,
        proposal: proposal.unwrap_or_else(|| params.kind().default_proposal()),
        resampling: ResamplingKind::Multinomial,
    };
    let h = FisherStatistic::full(params, y.len());
    let runs = exec.try_map(reps, |r| {
        let mut rng = derive(seed, &[r as u64]);
        run_filter(params, y, &h, &opts, &mut rng).map(|o| o.h)
    })?;
    let d = params.dim();
    let mut grad = Vec::with_capacity(d);
    let mut se = Vec::with_capacity(d);
    for c in 0..d {
        let (m, sd) = mean_sd(&runs.iter().map(|g| g[c]).collect::<Vec<_>>());
        grad.push(m);
        se.push(sd / (reps as f64).sqrt());
    }
    Ok(ReferenceGradient {
        params: *params,
        t_len: y.len(),
        n_particles: n,
        reps,
        seed,
        grad,
        se,
    })
}

/// One `(S, B, N, scheme)` cell of a bias sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub s: usize,
    pub b: usize,
    /// `None` is the exact (Kalman) estimator; LGSSM only.
    pub n: Option<usize>,
    pub scheme: SubsequenceScheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasPlan {
    pub params: ModelParams,
    pub y: Vec<f64>,
    pub cells: Vec<BiasCell>,
    pub n_reps: usize,
    pub seed: u64,
    pub proposal: Option<ProposalKind>,
    pub resampling: ResamplingKind,
    pub clock: crate::sgld::ClockMode,
}

/// One CSV row: a coordinate of one cell (or `"norm"` across coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub model: String,
    pub param_name: String,
    pub s: usize,
    pub b: usize,
    pub n: Option<usize>,
    pub scheme: SubsequenceScheme,
    pub n_reps: usize,
    pub bias: f64,
    pub bias_se: f64,
    pub mse: f64,
    pub wall_time_s: f64,
}

struct CellSummary {
    bias: Vec<f64>,
    se: Vec<f64>,
    mse: Vec<f64>,
    n_reps: usize,
    wall: f64,
}

/// Bias, standard error and MSE of `g^PF(S, B, N)` against `reference`.
///
/// `reference` defaults to the exact score for the LGSSM and is required for
/// the other models. Cells with `N = None` enumerate every subsequence, so
/// their bias is exact and has zero standard error. Finite-`N` cells with at
/// least two replicates per subsequence cycle through the subsequences in
/// order (stratified); the bias is the mean of the per-subsequence means and
/// its standard error comes from the within-subsequence spread only.
/// Otherwise subsequences are drawn at random.
pub fn grad_bias_experiment(
    plan: &BiasPlan,
    reference: Option<&[f64]>,
    exec: Execution,
) -> Result<Vec<BiasRow>> {
    let d = plan.params.dim();
    let t_len = plan.y.len();
    let g_ref: Vec<f64> = match reference {
        Some(r) if r.len() == d => r.to_vec(),
        Some(r) => {
            return Err(Error::Config(format!("reference has {} coordinates, expected {d}", r.len())))
        }
        None => match plan.params {
            ModelParams::Lgssm(_) => kalman::exact_score(&plan.params, &plan.y, &vec![1.0; t_len])?.grad,
            _ => {
                return Err(Error::MissingReference(format!(
                    "no reference gradient for {}; run `pfsgld make-reference` and pass its output",
                    plan.params.kind()
                )))
            }
        },
    };
    if plan.n_reps == 0 && plan.cells.iter().any(|c| c.n.is_some()) {
        return Err(Error::Config("n_reps must be positive".into()));
    }
    for c in &plan.cells {
        if c.s == 0 || c.s > t_len {
            return Err(Error::Config(format!("S = {} outside 1..={t_len}", c.s)));
        }
        if c.n.is_none() && !matches!(plan.params, ModelParams::Lgssm(_)) {
            return Err(Error::Unsupported {
                model: plan.params.kind().name(),
                what: "N = inf (exact) gradient cells".into(),
            });
        }
        if c.n.is_some_and(|n| n < 2) {
            return Err(Error::Config("cells need at least 2 particles".into()));
        }
    }

    // Flatten (cell, job) pairs so the whole sweep is one parallel map.
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for (ci, c) in plan.cells.iter().enumerate() {
        let count = match c.n {
            None => n_subsequences(t_len, c.s, c.scheme),
            Some(_) => plan.n_reps,
        };
        jobs.extend((0..count).map(|j| (ci, j)));
    }
    let results = exec.try_map(jobs.len(), |i| {
        let (ci, j) = jobs[i];
        run_job(plan, &plan.cells[ci], ci, j)
    })?;

    let mut rows = Vec::new();
    let names = plan.params.kind().unconstrained_names();
    let mut offset = 0;
    for (ci, c) in plan.cells.iter().enumerate() {
        let count = jobs[offset..].iter().take_while(|(k, _)| *k == ci).count();
        let cell = &results[offset..offset + count];
        offset += count;
        let s = summarize(plan, c, cell, &g_ref);
        let mk = |name: &str, bias: f64, se: f64, mse: f64| BiasRow {
            model: plan.params.kind().name().to_string(),
            param_name: name.to_string(),
            s: c.s,
            b: c.b,
            n: c.n,
            scheme: c.scheme,
            n_reps: s.n_reps,
            bias,
            bias_se: se,
            mse,
            wall_time_s: s.wall,
        };
        for (k, name) in names.iter().enumerate() {
            rows.push(mk(name, s.bias[k], s.se[k], s.mse[k]));
        }
        let norm = s.bias.iter().map(|b| b * b).sum::<f64>().sqrt();
        // delta method for the standard error of ‖bias‖
        let norm_se = if norm > 0.0 {
            s.bias.iter().zip(&s.se).map(|(b, e)| (b / norm * e).powi(2)).sum::<f64>().sqrt()
        } else {
            0.0
        };
        rows.push(mk("norm", norm, norm_se, s.mse.iter().sum()));
    }
    Ok(rows)
}

struct JobResult {
    sub: usize,
    grad: Vec<f64>,
    seconds: f64,
}

fn stratified(plan: &BiasPlan, c: &BiasCell) -> bool {
    plan.n_reps >= 2 * n_subsequences(plan.y.len(), c.s, c.scheme)
}

fn run_job(plan: &BiasPlan, c: &BiasCell, ci: usize, j: usize) -> Result<JobResult> {
    let t_len = plan.y.len();
    let nsub = n_subsequences(t_len, c.s, c.scheme);
    let started = Instant::now();
    let (spec, grad): (SubsequenceSpec, Vec<f64>) = match c.n {
        None => {
            let spec = nth_subsequence(t_len, c.s, c.b, c.scheme, j)?;
            let g = analytic_buffered_gradient(&plan.params, &plan.y, &spec)?.grad;
            (spec, g)
        }
        Some(n) => {
            let mut rng: Rng = derive(plan.seed, &[ci as u64, j as u64]);
            let spec = if stratified(plan, c) {
                nth_subsequence(t_len, c.s, c.b, c.scheme, j % nsub)?
            } else {
                sample_subsequence(t_len, c.s, c.b, c.scheme, &mut rng)?
            };
            let opts = FilterOptions {
                n_particles: n,
                proposal: plan.proposal.unwrap_or_else(|| plan.params.kind().default_proposal()),
                resampling: plan.resampling,
            };
            let g = pf_buffered_gradient(&plan.params, &plan.y, &spec, &opts, &mut rng)?.grad;
            (spec, g)
        }
    };
    let seconds = match plan.clock {
        crate::sgld::ClockMode::Measured => started.elapsed().as_secs_f64(),
        crate::sgld::ClockMode::Work => {
            spec.window_len() as f64 * c.n.unwrap_or(1) as f64 * WORK_SECONDS_PER_PARTICLE_STEP
        }
    };
    let sub = spec.s_start;
    Ok(JobResult { sub, grad, seconds })
}

fn summarize(plan: &BiasPlan, c: &BiasCell, jobs: &[JobResult], g_ref: &[f64]) -> CellSummary {
    let d = g_ref.len();
    let wall = jobs.iter().map(|j| j.seconds).sum();
    let n_reps = jobs.len();
    if n_reps == 0 {
        return CellSummary {
            bias: vec![f64::NAN; d],
            se: vec![f64::NAN; d],
            mse: vec![f64::NAN; d],
            n_reps,
            wall,
        };
    }
    let err = |j: &JobResult, k: usize| j.grad[k] - g_ref[k];
    let mse: Vec<f64> = (0..d)
        .map(|k| jobs.iter().map(|j| err(j, k).powi(2)).sum::<f64>() / n_reps as f64)
        .collect();
    let mut bias = vec![0.0; d];
    let mut se = vec![0.0; d];
    if c.n.is_none() {
        for (k, b) in bias.iter_mut().enumerate() {
            *b = jobs.iter().map(|j| err(j, k)).sum::<f64>() / n_reps as f64;
        }
    } else if stratified(plan, c) {
        // Group by subsequence start (the jobs cycle through them in order).
        let mut groups: Vec<(usize, Vec<&JobResult>)> = Vec::new();
        for j in jobs {
            match groups.iter_mut().find(|(s, _)| *s == j.sub) {
                Some((_, g)) => g.push(j),
                None => groups.push((j.sub, vec![j])),
            }
        }
        let m = groups.len() as f64;
        for k in 0..d {
            let mut var = 0.0;
            for (_, g) in &groups {
                let (mean, sd) = mean_sd(&g.iter().map(|j| err(j, k)).collect::<Vec<_>>());
                bias[k] += mean / m;
                var += sd * sd / g.len() as f64;
            }
            se[k] = var.sqrt() / m;
        }
    } else {
        for k in 0..d {
            let (mean, sd) = mean_sd(&jobs.iter().map(|j| err(j, k)).collect::<Vec<_>>());
            bias[k] = mean;
            se[k] = sd / (n_reps as f64).sqrt();
        }
    }
    CellSummary {
        bias,
        se,
        mse,
        n_reps,
        wall,
    }
}

pub const BIAS_HEADER: [&str; 11] = [
    "model", "param_name", "S", "B", "N", "scheme", "n_reps", "bias", "bias_se", "mse", "wall_time_s",
];

pub fn write_bias_csv<W: Write>(rows: &[BiasRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BIAS_HEADER)?;
    for r in rows {
        let scheme = match r.scheme {
            SubsequenceScheme::UniformStart => "uniform_start",
            SubsequenceScheme::StrictPartition => "strict_partition",
        };
        out.write_record([
            r.model.clone(),
            r.param_name.clone(),
            r.s.to_string(),
            r.b.to_string(),
            r.n.map_or_else(|| "inf".to_string(), |n| n.to_string()),
            scheme.to_string(),
            r.n_reps.to_string(),
            fmt_f64(r.bias),
            fmt_f64(r.bias_se),
            fmt_f64(r.mse),
            fmt_f64(r.wall_time_s),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<bias csv>", e))?;
    Ok(())
}
