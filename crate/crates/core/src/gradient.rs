//! Buffered stochastic gradient estimators.
//!
//! A subsequence `S = {s+1, …, s+S}` is drawn, extended by `B` indices on
//! each side to `S* = [max(1, s+1−B), min(T, s+S+B)]`, and the filter runs
//! over `y_{S*}` from the stationary law at the left edge. Only indices in
//! `S` contribute to the statistic, each scaled by `1 / Pr(t ∈ S)`; indices
//! in the buffers are traversed but masked to zero.
//!
//! Indices in [`SubsequenceSpec`] are 1-based and inclusive.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman;
use crate::model::ModelParams;
use crate::particle::{run_filter, FilterOptions, FisherStatistic, ProposalKind, ResamplingKind};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsequenceScheme {
    /// Start uniform on `{0, …, T−S}`; inclusion probabilities counted exactly.
    #[default]
    UniformStart,
    /// One of the `⌈T/S⌉` consecutive blocks, uniformly; scale `⌈T/S⌉`.
    StrictPartition,
}

/// A drawn subsequence with its buffered window and per-index scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsequenceSpec {
    pub t_len: usize,
    pub s_start: usize,
    pub s_end: usize,
    pub buffer: usize,
    pub star_start: usize,
    pub star_end: usize,
    /// Scale factors over `S*`: `scale[t − star_start]` is `Pr(t ∈ S)⁻¹` for
    /// `t ∈ S` and 0 in the buffers.
    pub scale: Vec<f64>,
    pub scheme: SubsequenceScheme,
}

impl SubsequenceSpec {
    /// The subsequence starting after offset `s` (so `S = {s+1, …, s+len}`).
    pub fn at(
        t_len: usize,
        s: usize,
        len: usize,
        buffer: usize,
        scheme: SubsequenceScheme,
        nominal_len: usize,
    ) -> Result<Self> {
        if len == 0 || s + len > t_len {
            return Err(Error::domain(format!(
                "subsequence ({s}, {len}) does not fit in T = {t_len}"
            )));
        }
        let s_start = s + 1;
        let s_end = s + len;
        let star_start = s_start.saturating_sub(buffer).max(1);
        let star_end = s_end.saturating_add(buffer).min(t_len);
        let scale = (star_start..=star_end)
            .map(|t| {
                if (s_start..=s_end).contains(&t) {
                    1.0 / inclusion_probability(t_len, nominal_len, t, scheme)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(SubsequenceSpec {
            t_len,
            s_start,
            s_end,
            buffer,
            star_start,
            star_end,
            scale,
            scheme,
        })
    }

    /// `S = S* = {1, …, T}` with unit scale.
    pub fn full(t_len: usize) -> Self {
        SubsequenceSpec {
            t_len,
            s_start: 1,
            s_end: t_len,
            buffer: 0,
            star_start: 1,
            star_end: t_len,
            scale: vec![1.0; t_len],
            scheme: SubsequenceScheme::UniformStart,
        }
    }

    pub fn s_len(&self) -> usize {
        self.s_end + 1 - self.s_start
    }

    pub fn window_len(&self) -> usize {
        self.star_end + 1 - self.star_start
    }

    /// Scale factor of 1-based index `t` (0 outside `S`).
    pub fn scale_at(&self, t: usize) -> f64 {
        if t < self.star_start || t > self.star_end {
            0.0
        } else {
            self.scale[t - self.star_start]
        }
    }

    /// `y_{S*}`.
    pub fn window<'a>(&self, y: &'a [f64]) -> &'a [f64] {
        &y[self.star_start - 1..self.star_end]
    }

    /// Multiplies every scale factor (used when a segment is drawn first).
    pub fn rescale(&mut self, factor: f64) {
        self.scale.iter_mut().for_each(|s| *s *= factor);
    }
}

/// `Pr(t ∈ S)` for 1-based `t` under `scheme`.
pub fn inclusion_probability(t_len: usize, s_len: usize, t: usize, scheme: SubsequenceScheme) -> f64 {
    match scheme {
        SubsequenceScheme::UniformStart => {
            let starts = t_len - s_len + 1;
            // starts s with s+1 ≤ t ≤ s+S
            let lo = t.saturating_sub(s_len);
            let hi = (t - 1).min(t_len - s_len);
            (hi + 1 - lo) as f64 / starts as f64
        }
        SubsequenceScheme::StrictPartition => 1.0 / t_len.div_ceil(s_len) as f64,
    }
}

/// Number of equiprobable subsequences the scheme chooses from.
pub fn n_subsequences(t_len: usize, s_len: usize, scheme: SubsequenceScheme) -> usize {
    if s_len == 0 || s_len > t_len {
        return 0;
    }
    match scheme {
        SubsequenceScheme::UniformStart => t_len - s_len + 1,
        SubsequenceScheme::StrictPartition => t_len.div_ceil(s_len),
    }
}

/// The `k`-th of the [`n_subsequences`] equiprobable subsequences.
pub fn nth_subsequence(
    t_len: usize,
    s_len: usize,
    buffer: usize,
    scheme: SubsequenceScheme,
    k: usize,
) -> Result<SubsequenceSpec> {
    check_sizes(t_len, s_len)?;
    match scheme {
        SubsequenceScheme::UniformStart => SubsequenceSpec::at(t_len, k, s_len, buffer, scheme, s_len),
        SubsequenceScheme::StrictPartition => {
            let s = k * s_len;
            let len = s_len.min(t_len - s);
            SubsequenceSpec::at(t_len, s, len, buffer, scheme, s_len)
        }
    }
}

fn check_sizes(t_len: usize, s_len: usize) -> Result<()> {
    if s_len == 0 || s_len > t_len {
        return Err(Error::domain(format!(
            "subsequence length S = {s_len} must satisfy 1 ≤ S ≤ T = {t_len}"
        )));
    }
    Ok(())
}

/// Draws a subsequence and builds its buffered window.
pub fn sample_subsequence(
    t_len: usize,
    s_len: usize,
    buffer: usize,
    scheme: SubsequenceScheme,
    rng: &mut Rng,
) -> Result<SubsequenceSpec> {
    check_sizes(t_len, s_len)?;
    let k = rng.random_range(0..n_subsequences(t_len, s_len, scheme));
    nth_subsequence(t_len, s_len, buffer, scheme, k)
}

/// Masked and scaled Fisher statistic over the window `S*`.
pub fn buffered_statistic(spec: &SubsequenceSpec, params: &ModelParams) -> FisherStatistic {
    FisherStatistic {
        dim: params.dim(),
        weights: spec.scale.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// `S = 40, B = 0`.
    NoBuffer,
    /// `S = 40, B = 10`.
    Buffered,
    /// `S = 40, B = T`.
    FullyBuffered,
    /// `S = T`.
    Full,
    /// One uniformly chosen segment, scaled by the segment count.
    Weekly,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::NoBuffer => "no_buffer",
            EstimatorKind::Buffered => "buffered",
            EstimatorKind::FullyBuffered => "fully_buffered",
            EstimatorKind::Full => "full",
            EstimatorKind::Weekly => "weekly",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "no_buffer" | "nobuffer" => EstimatorKind::NoBuffer,
            "buffered" | "buffer" => EstimatorKind::Buffered,
            "fully_buffered" => EstimatorKind::FullyBuffered,
            "full" => EstimatorKind::Full,
            "weekly" => EstimatorKind::Weekly,
            other => return Err(Error::Config(format!("unknown estimator '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientMeta {
    pub s: usize,
    pub b: usize,
    /// Particle count; `None` for exact (Kalman) expectations.
    pub n: Option<usize>,
    pub kind: EstimatorKind,
    pub loglik: Option<f64>,
}

/// A gradient in unconstrained coordinates with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub meta: GradientMeta,
}

fn kind_for(spec: &SubsequenceSpec) -> EstimatorKind {
    if spec.s_len() == spec.t_len {
        EstimatorKind::Full
    } else if spec.buffer == 0 {
        EstimatorKind::NoBuffer
    } else if spec.star_start == 1 && spec.star_end == spec.t_len {
        EstimatorKind::FullyBuffered
    } else {
        EstimatorKind::Buffered
    }
}

/// `g^PF(S, B, N)`: the particle approximation of the buffered gradient.
pub fn pf_buffered_gradient(
    params: &ModelParams,
    y: &[f64],
    spec: &SubsequenceSpec,
    opts: &FilterOptions,
    rng: &mut Rng,
) -> Result<GradientEstimate> {
    check_spec(spec, y)?;
    let h = buffered_statistic(spec, params);
    let out = run_filter(params, spec.window(y), &h, opts, rng)?;
    if out.h.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("particle gradient is not finite".into()));
    }
    Ok(GradientEstimate {
        grad: out.h,
        meta: GradientMeta {
            s: spec.s_len(),
            b: spec.buffer,
            n: Some(opts.n_particles),
            kind: kind_for(spec),
            loglik: Some(out.loglik),
        },
    })
}

/// `ĝ(S, B)` in closed form (LGSSM only): Kalman smoothing over `S*` from
/// the stationary law, with masked and scaled expectations.
pub fn analytic_buffered_gradient(
    params: &ModelParams,
    y: &[f64],
    spec: &SubsequenceSpec,
) -> Result<GradientEstimate> {
    check_spec(spec, y)?;
    let mut est = kalman::exact_score(params, spec.window(y), &spec.scale)?;
    est.meta = GradientMeta {
        s: spec.s_len(),
        b: spec.buffer,
        n: None,
        kind: kind_for(spec),
        loglik: est.meta.loglik,
    };
    Ok(est)
}

fn check_spec(spec: &SubsequenceSpec, y: &[f64]) -> Result<()> {
    if spec.t_len != y.len() {
        return Err(Error::domain(format!(
            "subsequence drawn for T = {} applied to {} observations",
            spec.t_len,
            y.len()
        )));
    }
    Ok(())
}

/// Everything needed to produce one stochastic gradient from (possibly
/// segmented) data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// `S`; ignored by `Full` and `Weekly`.
    pub subsequence: usize,
    /// `B`; ignored by `Full`, `Weekly` and `FullyBuffered`.
    pub buffer: usize,
    /// `None` selects exact Kalman expectations (LGSSM only).
    pub particles: Option<usize>,
    /// `None` selects the model's default proposal.
    pub proposal: Option<ProposalKind>,
    pub resampling: ResamplingKind,
    pub scheme: SubsequenceScheme,
}

impl EstimatorConfig {
    /// The estimator presets used in the SGLD experiments (`N = 1000`).
    pub fn preset(kind: EstimatorKind) -> Self {
        let (subsequence, buffer) = match kind {
            EstimatorKind::NoBuffer => (40, 0),
            EstimatorKind::Buffered => (40, 10),
            EstimatorKind::FullyBuffered => (40, usize::MAX),
            EstimatorKind::Full | EstimatorKind::Weekly => (usize::MAX, 0),
        };
        EstimatorConfig {
            kind,
            subsequence,
            buffer,
            particles: Some(1000),
            proposal: None,
            resampling: ResamplingKind::Multinomial,
            scheme: SubsequenceScheme::UniformStart,
        }
    }

    pub fn filter_options(&self, params: &ModelParams, n: usize) -> FilterOptions {
        FilterOptions {
            n_particles: n,
            proposal: self.proposal.unwrap_or_else(|| params.kind().default_proposal()),
            resampling: self.resampling,
        }
    }

    /// Number of latent-state propagations one estimate costs, per particle
    /// (the filtered window length, summed over segments for `Full`).
    pub fn window_cost(&self, segments: &[Vec<f64>]) -> usize {
        match self.kind {
            EstimatorKind::Full => segments.iter().map(Vec::len).sum(),
            EstimatorKind::Weekly => {
                let total: usize = segments.iter().map(Vec::len).sum();
                total / segments.len().max(1)
            }
            EstimatorKind::FullyBuffered => segments.iter().map(Vec::len).max().unwrap_or(0),
            _ => self.subsequence.saturating_add(self.buffer.saturating_mul(2)),
        }
    }

    fn on_spec(
        &self,
        params: &ModelParams,
        y: &[f64],
        spec: &SubsequenceSpec,
        rng: &mut Rng,
    ) -> Result<GradientEstimate> {
        match self.particles {
            Some(n) => pf_buffered_gradient(params, y, spec, &self.filter_options(params, n), rng),
            None => analytic_buffered_gradient(params, y, spec),
        }
    }

    /// One stochastic gradient of `log p(y | θ)` in unconstrained coordinates.
    ///
    /// Segments are independent sequences, each with its own stationary
    /// initial law. Subsequence estimators draw `(segment, start)` uniformly
    /// over all valid pairs, so inclusion probabilities stay exact.
    pub fn estimate(
        &self,
        params: &ModelParams,
        segments: &[Vec<f64>],
        rng: &mut Rng,
    ) -> Result<GradientEstimate> {
        if segments.is_empty() || segments.iter().any(Vec::is_empty) {
            return Err(Error::domain("gradient estimation needs nonempty data segments"));
        }
        let mut est = match self.kind {
            EstimatorKind::Full => {
                let mut total = vec![0.0; params.dim()];
                let mut ll = 0.0;
                for y in segments {
                    let e = self.on_spec(params, y, &SubsequenceSpec::full(y.len()), rng)?;
                    total.iter_mut().zip(&e.grad).for_each(|(a, g)| *a += g);
                    ll += e.meta.loglik.unwrap_or(f64::NAN);
                }
                GradientEstimate {
                    grad: total,
                    meta: GradientMeta {
                        s: segments.iter().map(Vec::len).sum(),
                        b: 0,
                        n: self.particles,
                        kind: EstimatorKind::Full,
                        loglik: Some(ll),
                    },
                }
            }
            EstimatorKind::Weekly => {
                let j = rng.random_range(0..segments.len());
                let y = &segments[j];
                let mut e = self.on_spec(params, y, &SubsequenceSpec::full(y.len()), rng)?;
                let k = segments.len() as f64;
                e.grad.iter_mut().for_each(|g| *g *= k);
                e
            }
            EstimatorKind::NoBuffer | EstimatorKind::Buffered | EstimatorKind::FullyBuffered => {
                let buffer = if self.kind == EstimatorKind::FullyBuffered {
                    usize::MAX
                } else {
                    self.buffer
                };
                if self.subsequence == 0 {
                    return Err(Error::domain("subsequence length must be positive"));
                }
                // Segments shorter than S are used whole.
                let s_of = |y: &Vec<f64>| self.subsequence.min(y.len());
                let counts: Vec<usize> = segments
                    .iter()
                    .map(|y| n_subsequences(y.len(), s_of(y), self.scheme))
                    .collect();
                let total: usize = counts.iter().sum();
                // Uniform over all (segment, subsequence) pairs.
                let mut k = rng.random_range(0..total);
                let mut j = 0;
                while k >= counts[j] {
                    k -= counts[j];
                    j += 1;
                }
                let y = &segments[j];
                let mut spec = nth_subsequence(y.len(), s_of(y), buffer, self.scheme, k)?;
                spec.rescale(total as f64 / counts[j] as f64);
                self.on_spec(params, y, &spec, rng)?
            }
        };
        est.meta.kind = self.kind;
        Ok(est)
    }
}
