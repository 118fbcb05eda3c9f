//! Particle-buffered stochastic gradients and SGLD for state space models.
//!
//! The crate estimates the score of `log p(y_{1:T} | θ)` from short buffered
//! subsequences with a particle filter and feeds those estimates to
//! stochastic gradient Langevin dynamics. Exact Kalman counterparts for the
//! linear Gaussian model serve as oracles.
//!
//! Modules, bottom up:
//!
//! * [`model`]: LGSSM, stochastic volatility and GARCH(1,1) densities,
//!   gradients, priors and parameter transforms.
//! * [`kalman`]: exact filter, smoother, likelihood and score (LGSSM).
//! * [`particle`]: the SIR filter with pairwise statistics, heldout and
//!   predictive likelihoods.
//! * [`gradient`]: subsequence sampling and buffered gradient estimators.
//! * [`sgld`]: the sampler and its chain format.
//! * [`diagnostics`]: KSD, MSE to truth and the gradient bias harness.
//! * [`data`]: log-returns, segmentation and CSV I/O.
//!
//! Data-parallel helpers live in [`exec`]; with the default `parallel`
//! feature they run on rayon, otherwise sequentially. Results never depend
//! on which.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod gradient;
pub mod kalman;
pub mod math;
pub mod model;
pub mod particle;
pub mod rng;
pub mod sgld;

pub use error::{Error, Result};
pub use exec::Execution;
pub use gradient::{EstimatorConfig, EstimatorKind, GradientEstimate, SubsequenceScheme, SubsequenceSpec};
pub use model::{LatentState, ModelKind, ModelParams, Trajectory};
pub use particle::{FilterOptions, ProposalKind, ResamplingKind};
pub use sgld::{Chain, SgldConfig};
