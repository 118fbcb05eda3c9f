#![allow(clippy::needless_range_loop)]

use super::*;
use crate::math::LN_2PI;
use crate::rng::master;
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng as _;

fn lgssm(phi: f64, sigma: f64, tau: f64) -> ModelParams {
    ModelParams::Lgssm(Lgssm::new(phi, sigma, tau).unwrap())
}

fn svm(phi: f64, sigma: f64, tau: f64) -> ModelParams {
    ModelParams::Svm(Svm::new(phi, sigma, tau).unwrap())
}

fn paper_garch() -> Garch {
    Garch::from_abg(0.1, 0.8, 0.05, 0.3).unwrap()
}

/// Complete-data log density with the GARCH variance of `x` recomputed
/// from the recursion, as a function of unconstrained coordinates.
fn complete_logpdf(kind: ModelKind, u: &[f64], x: f64, prev: &LatentState, y: f64) -> f64 {
    let p = ModelParams::from_unconstrained(kind, u).unwrap();
    let xs = match &p {
        ModelParams::Garch(g) => LatentState::with_variance(x, g.next_variance(prev)),
        _ => LatentState::scalar(x),
    };
    p.transition_logpdf(prev, &xs).unwrap() + p.emission_logpdf(&xs, y)
}

fn central_diff(f: impl Fn(&[f64]) -> f64, u: &[f64], k: usize) -> f64 {
    let h = 1e-5 * u[k].abs().max(1.0);
    let mut up = u.to_vec();
    let mut dn = u.to_vec();
    up[k] += h;
    dn[k] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

fn random_params(kind: ModelKind, rng: &mut crate::rng::Rng) -> ModelParams {
    match kind {
        ModelKind::Lgssm => lgssm(rng.random_range(-0.95..0.95), rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)),
        ModelKind::Svm => svm(rng.random_range(-0.95..0.95), rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)),
        ModelKind::Garch => ModelParams::Garch(
            Garch::new(
                rng.random_range(0.1..1.9),
                rng.random_range(0.1..0.95),
                rng.random_range(0.1..0.95),
                rng.random_range(0.2..1.5),
            )
            .unwrap(),
        ),
    }
}

fn assert_close(a: f64, b: f64, rel: f64, what: &str) {
    let scale = a.abs().max(b.abs()).max(1e-3);
    assert!((a - b).abs() / scale < rel, "{what}: {a} vs {b}");
}

#[test]
fn complete_data_grad_matches_finite_differences() {
    let mut rng = master(11);
    for kind in [ModelKind::Lgssm, ModelKind::Svm, ModelKind::Garch] {
        for _ in 0..100 {
            let p = random_params(kind, &mut rng);
            let prev = match kind {
                ModelKind::Garch => LatentState::with_variance(rng.random_range(-2.0..2.0), rng.random_range(0.1..2.0)),
                _ => LatentState::scalar(rng.random_range(-2.0..2.0)),
            };
            let x = rng.random_range(-2.0..2.0);
            let y = rng.random_range(-3.0..3.0);
            let xs = match &p {
                ModelParams::Garch(g) => LatentState::with_variance(x, g.next_variance(&prev)),
                _ => LatentState::scalar(x),
            };
            let g = p.complete_data_grad(&xs, &prev, y).unwrap();
            let u = p.unconstrained();
            for k in 0..u.len() {
                let fd = central_diff(|v| complete_logpdf(kind, v, x, &prev, y), &u, k);
                assert_close(g[k], fd, 1e-6, &format!("{kind} coordinate {k}"));
            }
        }
    }
}

#[test]
fn log_prior_grad_matches_finite_differences() {
    let mut rng = master(12);
    for kind in [ModelKind::Lgssm, ModelKind::Svm, ModelKind::Garch] {
        for _ in 0..50 {
            let p = random_params(kind, &mut rng);
            let g = p.log_prior_grad().unwrap();
            let u = p.unconstrained();
            for k in 0..u.len() {
                let fd = central_diff(
                    |v| ModelParams::from_unconstrained(kind, v).unwrap().log_prior().unwrap(),
                    &u,
                    k,
                );
                assert_close(g[k], fd, 1e-6, &format!("{kind} prior coordinate {k}"));
            }
        }
    }
}

#[test]
fn prior_gradient_examples() {
    let g = lgssm(0.0, 0.8, 1.3).log_prior_grad().unwrap();
    assert_eq!(g[0], 0.0);
    // Gamma(101, rate 101) in σ⁻¹ plus the φ-prior's log σ⁻¹ term (zero at φ = 0 only
    // through the quadratic part): 1/a + 100/a − 101 at φ = 0.
    let a = 1.0 / 0.8;
    assert_relative_eq!(g[1], 1.0 / a + 100.0 / a - 101.0, max_relative = 1e-12);
    let b = 1.0 / 1.3;
    assert_relative_eq!(g[2], 100.0 / b - 101.0, max_relative = 1e-12);
}

#[test]
fn prior_support_boundaries_are_errors() {
    assert!(ModelParams::Garch(Garch::new(2.5, 0.5, 0.5, 1.0).unwrap()).log_prior_grad().is_err());
    assert!(ModelParams::from_unconstrained(ModelKind::Lgssm, &[0.5, -1.0, 1.0]).is_err());
}

#[test]
fn transition_and_emission_examples() {
    let half_ln_2pi = -0.5 * LN_2PI;
    let s = LatentState::scalar;
    assert_relative_eq!(lgssm(0.0, 1.0, 1.0).transition_logpdf(&s(3.7), &s(0.0)).unwrap(), half_ln_2pi);
    let svm1 = ModelParams::Svm(Svm { phi: 1.0, sigma: 1.0, tau: 1.0 });
    assert_relative_eq!(svm1.transition_logpdf(&s(2.0), &s(2.0)).unwrap(), half_ln_2pi);
    assert_relative_eq!(lgssm(0.5, 1.0, 1.0).emission_logpdf(&s(0.0), 0.0), half_ln_2pi);
    assert_relative_eq!(svm(0.5, 1.0, 1.0).emission_logpdf(&s(0.0), 0.0), half_ln_2pi);
    let e2 = 1f64.exp().powi(2);
    let want = -0.5 * (2.0 * std::f64::consts::PI * 0.25 * e2).ln() - 1.0 / (2.0 * 0.25 * e2);
    assert_relative_eq!(svm(0.5, 1.0, 0.5).emission_logpdf(&s(2.0), 1.0), want, max_relative = 1e-12);

    let g = ModelParams::Garch(paper_garch());
    let prev = LatentState::with_variance(0.0, 0.1 / 0.15);
    let s1 = 0.1 + 0.05 * (0.1 / 0.15);
    let x = LatentState::with_variance(0.5, s1);
    assert_relative_eq!(
        g.transition_logpdf(&prev, &x).unwrap(),
        crate::math::normal_logpdf(0.5, 0.0, s1),
        max_relative = 1e-12
    );
}

#[test]
fn garch_aux_mismatch_is_contract_error() {
    let g = ModelParams::Garch(paper_garch());
    let prev = LatentState::with_variance(0.0, 0.6);
    let bad = LatentState::with_variance(0.5, 123.0);
    assert!(matches!(g.transition_logpdf(&prev, &bad), Err(Error::Contract(_))));
    assert!(matches!(
        g.transition_logpdf(&LatentState::scalar(0.0), &bad),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        g.complete_data_grad(&bad, &LatentState::scalar(0.0), 0.0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn complete_data_grad_examples() {
    let p = lgssm(0.7, 0.9, 1.4);
    let prev = LatentState::scalar(1.3);
    let x = LatentState::scalar(0.7 * 1.3);
    assert_eq!(p.complete_data_grad(&x, &prev, 0.2).unwrap()[0], 0.0);
    let y_eq_x = p.complete_data_grad(&x, &prev, x.x).unwrap();
    assert_relative_eq!(y_eq_x[2], 1.4, max_relative = 1e-14);
}

#[test]
fn garch_reparametrization_inverts() {
    let g = paper_garch();
    assert_relative_eq!(g.mu, 0.1 / 0.15, max_relative = 1e-12);
    assert_relative_eq!(g.phi, 0.85, max_relative = 1e-12);
    assert_relative_eq!(g.lambda, 0.8 / 0.85, max_relative = 1e-12);
    let (a, b, c) = g.abg();
    assert_relative_eq!(a, 0.1, max_relative = 1e-12);
    assert_relative_eq!(b, 0.8, max_relative = 1e-12);
    assert_relative_eq!(c, 0.05, max_relative = 1e-12);
    assert!(Garch::from_abg(0.1, 0.6, 0.5, 1.0).is_err());
}

#[test]
fn initial_draw_moments() {
    let mut rng = master(3);
    let n = 100_000;
    let p = svm(0.9, 0.5, 0.5);
    let draws: Vec<f64> = (0..n).map(|_| p.prior_initial_sample(&mut rng).unwrap().x).collect();
    let (_, sd) = crate::math::mean_sd(&draws);
    let want = 0.25 / 0.19;
    // SE of a sample variance ≈ v·sqrt(2/n)
    assert!((sd * sd - want).abs() < 4.0 * want * (2.0 / n as f64).sqrt());

    let g = ModelParams::Garch(paper_garch());
    let x0 = g.prior_initial_sample(&mut rng).unwrap();
    assert_relative_eq!(x0.aux_variance.unwrap(), 0.1 / 0.15, max_relative = 1e-12);
    assert!(lgssm(1.0, 1.0, 1.0).prior_initial_sample(&mut rng).is_err());
}

#[test]
fn densities_normalize() {
    // E_q[p/q] = 1 with q = N(m, 4v) wide enough to cover p.
    let mut rng = master(5);
    let n = 100_000;
    let check = |logp: &dyn Fn(f64) -> f64, m: f64, v: f64, rng: &mut crate::rng::Rng| {
        let sq = (4.0 * v).sqrt();
        let r: Vec<f64> = (0..n)
            .map(|_| {
                let z = m + sq * std_normal(rng);
                (logp(z) - crate::math::normal_logpdf(z, m, 4.0 * v)).exp()
            })
            .collect();
        let (mean, sd) = crate::math::mean_sd(&r);
        assert!((mean - 1.0).abs() < 3.0 * sd / (n as f64).sqrt(), "mean {mean}");
    };
    let prev = LatentState::scalar(0.8);
    let p = lgssm(0.9, 0.7, 1.0);
    check(&|x| p.transition_logpdf(&prev, &LatentState::scalar(x)).unwrap(), 0.72, 0.49, &mut rng);
    check(&|y| p.emission_logpdf(&LatentState::scalar(0.3), y), 0.3, 1.0, &mut rng);
    let s = svm(0.9, 0.5, 0.5);
    check(&|y| s.emission_logpdf(&LatentState::scalar(0.4), y), 0.0, 0.25 * 0.4f64.exp(), &mut rng);
    let g = paper_garch();
    let gp = ModelParams::Garch(g);
    let gprev = LatentState::with_variance(0.4, 0.5);
    let sv = g.next_variance(&gprev);
    check(
        &|x| gp.transition_logpdf(&gprev, &LatentState::with_variance(x, sv)).unwrap(),
        0.0,
        sv,
        &mut rng,
    );
}

#[test]
fn simulate_shapes_and_moments() {
    let mut rng = master(7);
    let p = lgssm(0.9, 0.7, 1.0);
    let tr = p.simulate(256, &mut rng).unwrap();
    assert_eq!(tr.latents.len(), 257);
    assert_eq!(tr.observations.len(), 256);

    let tr = p.simulate(100_000, &mut rng).unwrap();
    let (_, sd) = crate::math::mean_sd(&tr.observations);
    let want = 0.49 / 0.19 + 1.0;
    assert!((sd * sd - want).abs() / want < 0.05, "var {}", sd * sd);

    let tr = svm(0.9, 0.5, 0.5).simulate(100_000, &mut rng).unwrap();
    let (m, sd) = crate::math::mean_sd(&tr.observations);
    assert!(m.abs() < 3.0 * sd / (1e5f64).sqrt());

    let tiny = lgssm(0.6, 1e-12, 1e-12).simulate(1, &mut rng).unwrap();
    assert_relative_eq!(tiny.observations[0], 0.6 * tiny.latents[0].x, epsilon = 1e-9);

    assert!(lgssm(1.2, 1.0, 1.0).simulate(10, &mut rng).is_err());
}

#[test]
fn garch_simulation_follows_recursion() {
    let mut rng = master(8);
    let g = paper_garch();
    let tr = ModelParams::Garch(g).simulate(500, &mut rng).unwrap();
    for w in tr.latents.windows(2) {
        assert_eq!(w[1].aux_variance.unwrap(), g.next_variance(&w[0]));
    }
}

#[test]
fn lipschitz_bounds() {
    assert_relative_eq!(lgssm(0.9, 0.7, 1.0).lipschitz_bound().unwrap(), 0.9 / 1.49, max_relative = 1e-12);
    assert_relative_eq!(lgssm(0.9, 0.7, 1.0).lipschitz_bound().unwrap(), 0.60403, epsilon = 1e-5);
    assert_eq!(svm(0.9, 0.5, 0.5).lipschitz_bound().unwrap(), 0.9);
    assert_eq!(lgssm(0.0, 0.3, 2.0).lipschitz_bound().unwrap(), 0.0);
    assert!(matches!(
        ModelParams::Garch(paper_garch()).lipschitz_bound(),
        Err(Error::Unsupported { .. })
    ));
}

#[test]
fn initial_parameter_draws_are_admissible() {
    let mut rng = master(9);
    for kind in [ModelKind::Lgssm, ModelKind::Svm, ModelKind::Garch] {
        for _ in 0..200 {
            let p = ModelParams::sample_initial(kind, &mut rng).unwrap();
            assert!(p.is_admissible(), "{p:?}");
        }
    }
}

#[test]
fn parse_and_display_round_trip() {
    for kind in [ModelKind::Lgssm, ModelKind::Svm, ModelKind::Garch] {
        assert_eq!(kind.to_string().parse::<ModelKind>().unwrap(), kind);
        assert_eq!(kind.reference_params().kind(), kind);
    }
    assert!("arma".parse::<ModelKind>().is_err());
}

proptest! {
    #[test]
    fn unconstrained_round_trip(phi in -0.99f64..0.99, s in 0.05f64..5.0, t in 0.05f64..5.0,
                                mu in 0.01f64..1.99, gp in 0.01f64..0.99, gl in 0.01f64..0.99) {
        for p in [lgssm(phi, s, t), svm(phi, s, t), ModelParams::Garch(Garch::new(mu, gp, gl, t).unwrap())] {
            let back = ModelParams::from_unconstrained(p.kind(), &p.unconstrained()).unwrap();
            for (a, b) in p.natural().iter().zip(back.natural()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn lipschitz_below_one_iff_condition(phi in -3.0f64..3.0, s in 0.05f64..3.0, t in 0.05f64..3.0) {
        let l = lgssm(phi, s, t).lipschitz_bound().unwrap();
        prop_assert_eq!(l < 1.0, phi.abs() < 1.0 + s * s / (t * t));
        let l = svm(phi, s, t).lipschitz_bound().unwrap();
        prop_assert_eq!(l < 1.0, phi.abs() < 1.0);
    }
}
