use super::*;
use crate::model::{ModelKind, Svm};
use crate::rng::master;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

fn lgssm(phi: f64, sigma: f64, tau: f64) -> ModelParams {
    ModelParams::Lgssm(Lgssm::new(phi, sigma, tau).unwrap())
}

fn data(params: &ModelParams, t: usize, seed: u64) -> Vec<f64> {
    params.simulate(t, &mut master(seed)).unwrap().observations
}

/// Joint Gaussian of `(x_0..x_T, y_1..y_T)` built entry by entry.
struct Dense {
    /// Cov(x_i, x_j), i, j = 0..=T.
    sxx: DMatrix<f64>,
    /// Cov(x_i, y_j).
    sxy: DMatrix<f64>,
    syy: DMatrix<f64>,
}

fn dense(phi: f64, sigma: f64, tau: f64, t: usize) -> Dense {
    let v = sigma * sigma / (1.0 - phi * phi);
    let sxx = DMatrix::from_fn(t + 1, t + 1, |i, j| v * phi.powi((i as i32 - j as i32).abs()));
    let sxy = DMatrix::from_fn(t + 1, t, |i, j| sxx[(i, j + 1)]);
    let syy = DMatrix::from_fn(t, t, |i, j| sxx[(i + 1, j + 1)] + if i == j { tau * tau } else { 0.0 });
    Dense { sxx, sxy, syy }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn single_observation_loglik() {
    let ll = loglik(&lgssm(0.0, 1.0, 1.0), &[0.0]).unwrap();
    assert!((ll - (-0.5 * (4.0 * std::f64::consts::PI).ln())).abs() < 1e-14);
    assert!((ll - -1.26551).abs() < 1e-5);
}

#[test]
fn loglik_matches_dense_gaussian() {
    let (phi, sigma, tau) = (0.9, 0.7, 1.0);
    let p = lgssm(phi, sigma, tau);
    let y = data(&p, 100, 1);
    let d = dense(phi, sigma, tau, 100);
    let chol = d.syy.clone().cholesky().unwrap();
    let yv = DVector::from_vec(y.clone());
    let quad = yv.dot(&chol.solve(&yv));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let want = -0.5 * (100.0 * crate::math::LN_2PI + logdet + quad);
    let got = loglik(&p, &y).unwrap();
    assert!(rel(got, want) < 1e-8, "{got} vs {want}");
}

#[test]
fn smoother_matches_dense_gaussian() {
    let (phi, sigma, tau) = (0.8, 0.6, 0.9);
    let p = lgssm(phi, sigma, tau);
    let y = data(&p, 50, 2);
    let d = dense(phi, sigma, tau, 50);
    let chol = d.syy.clone().cholesky().unwrap();
    let yv = DVector::from_vec(y.clone());
    let mean = &d.sxy * chol.solve(&yv);
    let cov = &d.sxx - &d.sxy * chol.solve(&d.sxy.transpose());
    let sm = kalman_smoother(&p, &y).unwrap();
    let scale = mean.amax();
    for t in 0..=50 {
        assert!((sm[t].mean - mean[t]).abs() < 1e-8 * scale, "mean at {t}");
        assert!(rel(sm[t].variance, cov[(t, t)]) < 1e-8, "variance at {t}");
        if t > 0 {
            assert!(rel(sm[t].cross_covariance.unwrap(), cov[(t, t - 1)]) < 1e-8, "cross at {t}");
        }
    }
}

#[test]
fn smoother_ends_at_filter_and_shrinks_variance() {
    let p = ModelKind::Lgssm.reference_params();
    let y = data(&p, 80, 3);
    let (f, _) = kalman_filter(&p, &y).unwrap();
    let s = kalman_smoother(&p, &y).unwrap();
    assert_eq!(f[80].mean, s[80].mean);
    assert_eq!(f[80].variance, s[80].variance);
    for (a, b) in f.iter().zip(&s) {
        assert!(b.variance <= a.variance * (1.0 + 1e-12));
    }
}

#[test]
fn uninformative_observations_leave_the_prior() {
    let p = lgssm(0.7, 0.5, 1e8);
    let y = data(&lgssm(0.7, 0.5, 1.0), 30, 4);
    let v = 0.25 / 0.51;
    let (f, _) = kalman_filter(&p, &y).unwrap();
    let s = kalman_smoother(&p, &y).unwrap();
    for b in f.iter().chain(&s) {
        assert!(b.mean.abs() < 1e-10);
        assert!(rel(b.variance, v) < 1e-10);
    }
}

/// `log p(y | θ(u))` with `x_0`'s law frozen at the base point.
fn frozen_loglik(u: &[f64], y: &[f64], init: InitialLaw) -> f64 {
    let p = ModelParams::from_unconstrained(ModelKind::Lgssm, u).unwrap();
    kalman_filter_with(&p, y, init).unwrap().1
}

#[test]
fn exact_score_matches_finite_differences() {
    let mut rng = master(5);
    for _ in 0..20 {
        let p = lgssm(rng.random_range(-0.9..0.9), rng.random_range(0.4..1.5), rng.random_range(0.4..1.5));
        let y = data(&p, 100, rng.random());
        let g = exact_score(&p, &y, &[1.0; 100]).unwrap().grad;
        let init = match &p {
            ModelParams::Lgssm(m) => InitialLaw::stationary(m).unwrap(),
            _ => unreachable!(),
        };
        let u = p.unconstrained();
        for k in 0..3 {
            let h = 1e-5 * u[k].abs().max(1.0);
            let (mut a, mut b) = (u.clone(), u.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (frozen_loglik(&a, &y, init) - frozen_loglik(&b, &y, init)) / (2.0 * h);
            let err = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0);
            assert!(err < 1e-5, "coordinate {k}: {} vs {fd}", g[k]);
        }
    }
}

#[test]
fn zero_weights_give_zero_score() {
    let p = ModelKind::Lgssm.reference_params();
    let y = data(&p, 10, 6);
    assert_eq!(exact_score(&p, &y, &[0.0; 10]).unwrap().grad, vec![0.0; 3]);
    assert!(exact_score(&p, &y, &[1.0; 9]).is_err());
}

#[test]
fn partition_blocks_average_to_full_score() {
    let p = ModelKind::Lgssm.reference_params();
    let y = data(&p, 100, 7);
    let full = exact_score(&p, &y, &[1.0; 100]).unwrap().grad;
    let mut avg = [0.0; 3];
    for b in 0..5 {
        let w: Vec<f64> = (0..100).map(|t| if t / 20 == b { 5.0 } else { 0.0 }).collect();
        let g = exact_score(&p, &y, &w).unwrap().grad;
        for k in 0..3 {
            avg[k] += g[k] / 5.0;
        }
    }
    for k in 0..3 {
        assert!((avg[k] - full[k]).abs() < 1e-10 * full[k].abs().max(1.0));
    }
}

#[test]
fn other_models_are_unsupported() {
    let p = ModelParams::Svm(Svm::new(0.9, 0.5, 0.5).unwrap());
    assert!(matches!(kalman_filter(&p, &[0.1]), Err(Error::Unsupported { .. })));
    assert!(matches!(exact_score(&p, &[0.1], &[1.0]), Err(Error::Unsupported { .. })));
}

#[test]
fn log_posterior_adds_prior() {
    let p = ModelKind::Lgssm.reference_params();
    let y = data(&p, 20, 8);
    let lp = log_posterior(&p, &y).unwrap();
    assert!((lp - loglik(&p, &y).unwrap() - p.log_prior().unwrap()).abs() < 1e-12);
}
