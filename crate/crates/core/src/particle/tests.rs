use super::*;
use crate::kalman;
use crate::math::{mean_sd, normal_logpdf};
use crate::model::{Lgssm, ModelKind, Svm};
use crate::rng::{derive, master};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn paper_lgssm() -> ModelParams {
    ModelKind::Lgssm.reference_params()
}

fn lgssm(phi: f64, sigma: f64, tau: f64) -> ModelParams {
    ModelParams::Lgssm(Lgssm::new(phi, sigma, tau).unwrap())
}

fn data(params: &ModelParams, t: usize, seed: u64) -> Vec<f64> {
    params.simulate(t, &mut master(seed)).unwrap().observations
}

fn counts(anc: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &a in anc {
        c[a] += 1;
    }
    c
}

const KINDS: [ResamplingKind; 3] = [
    ResamplingKind::Multinomial,
    ResamplingKind::Stratified,
    ResamplingKind::Residual,
];

#[test]
fn point_mass_weights_give_one_ancestor() {
    let mut lw = vec![f64::NEG_INFINITY; 50];
    lw[0] = 0.0;
    for kind in KINDS {
        let anc = resample(&lw, kind, &mut master(1)).unwrap();
        assert!(anc.iter().all(|&a| a == 0), "{kind:?}");
    }
}

#[test]
fn stratified_uniform_weights_keep_every_particle_once() {
    let n = 1000;
    let lw = vec![-(n as f64).ln(); n];
    let anc = resample(&lw, ResamplingKind::Stratified, &mut master(2)).unwrap();
    assert!(counts(&anc, n).iter().all(|&c| c == 1));
}

#[test]
fn offspring_counts_pass_chi_square() {
    let n = 100_000;
    let w = [1.0, 2.0, 3.0, 4.0];
    let lw: Vec<f64> = w.iter().map(|x: &f64| (x / 10.0).ln()).collect();
    // Only N matters for the offspring distribution; spread the mass over
    // four particles and draw N ancestors by tiling the weights.
    let tiled: Vec<f64> = (0..n).map(|i| lw[i % 4] - ((n / 4) as f64).ln()).collect();
    for kind in KINDS {
        let anc = resample(&tiled, kind, &mut master(3)).unwrap();
        assert_eq!(anc.len(), n);
        let c = counts(&anc.iter().map(|a| a % 4).collect::<Vec<_>>(), 4);
        let chi2: f64 = c
            .iter()
            .zip(&w)
            .map(|(&o, &wi)| {
                let e = n as f64 * wi / 10.0;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "{kind:?}: chi2 {chi2}, p {p}");
    }
}

#[test]
fn expected_offspring_is_n_times_weight() {
    let raw = [0.05, 0.4, 0.05, 0.3, 0.2];
    let lw: Vec<f64> = raw.iter().map(|x: &f64| x.ln()).collect();
    let reps = 4000;
    for kind in KINDS {
        let mut per: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for r in 0..reps {
            let anc = resample(&lw, kind, &mut derive(4, &[r])).unwrap();
            for (i, c) in counts(&anc, 5).into_iter().enumerate() {
                per[i].push(c as f64);
            }
        }
        for (i, v) in per.iter().enumerate() {
            let (m, sd) = mean_sd(v);
            let se = (sd / (reps as f64).sqrt()).max(1e-12);
            assert!((m - 5.0 * raw[i]).abs() <= 3.0 * se + 1e-12, "{kind:?} i={i}: {m}");
        }
    }
}

#[test]
fn resampling_preserves_weighted_statistics() {
    let raw = [0.1, 0.25, 0.05, 0.3, 0.3];
    let h = [1.0, -2.0, 4.0, 0.5, 3.0];
    let want: f64 = raw.iter().zip(&h).map(|(w, h)| w * h).sum();
    let lw: Vec<f64> = raw.iter().map(|x: &f64| x.ln()).collect();
    for kind in KINDS {
        let v: Vec<f64> = (0..4000)
            .map(|r| {
                let anc = resample(&lw, kind, &mut derive(5, &[r])).unwrap();
                anc.iter().map(|&a| h[a]).sum::<f64>() / anc.len() as f64
            })
            .collect();
        let (m, sd) = mean_sd(&v);
        assert!((m - want).abs() <= 3.0 * sd / 4000f64.sqrt() + 1e-12, "{kind:?}");
    }
}

#[test]
fn non_finite_weights_are_numeric_errors() {
    let r = resample(&[0.0, f64::NAN], ResamplingKind::Multinomial, &mut master(0));
    assert!(matches!(r, Err(Error::Numeric(_))));
    let r = resample(&[f64::NEG_INFINITY; 3], ResamplingKind::Stratified, &mut master(0));
    assert!(matches!(r, Err(Error::Numeric(_))));
}

#[test]
fn proposal_log_weights() {
    let Lgssm { phi, sigma, tau } = Lgssm::new(0.9, 0.7, 1.0).unwrap();
    let m = Lgssm { phi, sigma, tau };
    let prev = crate::model::LatentState::scalar(0.4);
    let mut rng = master(6);
    for _ in 0..20 {
        let (x, lw) = m.propose(&prev, 1.3, ProposalKind::Prior, &mut rng);
        assert_eq!(lw, m.emission_logpdf(&x, 1.3));
        let (_, lw) = m.propose(&prev, 1.3, ProposalKind::OptimalInstrumental, &mut rng);
        assert_eq!(lw, normal_logpdf(1.3, 0.9 * 0.4, 0.49 + 1.0));
    }
}

#[test]
fn zero_statistic_leaves_filter_unchanged() {
    let p = paper_lgssm();
    let y = data(&p, 30, 7);
    let opts = FilterOptions::new(&p, 200);
    let a = run_filter(&p, &y, &ZeroStatistic(3), &opts, &mut master(8)).unwrap();
    let b = run_filter(&p, &y, &FisherStatistic::full(&p, 30), &opts, &mut master(8)).unwrap();
    assert!(a.h.iter().all(|&v| v == 0.0));
    assert_eq!(a.cloud.log_weights, b.cloud.log_weights);
    assert_eq!(a.cloud.particles, b.cloud.particles);
    assert_eq!(a.loglik, b.loglik);
}

#[test]
fn step_matches_run_filter() {
    let p = paper_lgssm();
    let y = data(&p, 5, 9);
    let opts = FilterOptions::new(&p, 100);
    let h = FisherStatistic::full(&p, 5);
    let mut rng = master(10);
    let mut cloud = ParticleCloud::initialize(&p, 100, 3, &mut rng).unwrap();
    for (t, &yt) in y.iter().enumerate() {
        cloud = step(&cloud, &p, yt, t, &h, &opts, &mut rng).unwrap();
    }
    let out = run_filter(&p, &y, &h, &opts, &mut master(10)).unwrap();
    assert_eq!(cloud.weighted_stats(), out.h);
    assert_eq!(cloud.log_marginal, out.loglik);
    assert_eq!(cloud.t, 5);
}

#[test]
fn score_agrees_with_kalman() {
    let p = paper_lgssm();
    let y = data(&p, 20, 11);
    let exact = kalman::exact_score(&p, &y, &[1.0; 20]).unwrap().grad;
    let opts = FilterOptions::new(&p, 10_000);
    let h = FisherStatistic::full(&p, 20);
    let runs: Vec<Vec<f64>> = (0..200)
        .map(|r| run_filter(&p, &y, &h, &opts, &mut derive(12, &[r])).unwrap().h)
        .collect();
    for k in 0..3 {
        let (m, sd) = mean_sd(&runs.iter().map(|g| g[k]).collect::<Vec<_>>());
        let se = sd / 200f64.sqrt();
        assert!((m - exact[k]).abs() < 3.0 * se, "coordinate {k}: {m} vs {} (se {se})", exact[k]);
    }
}

#[test]
fn likelihood_estimate_is_unbiased() {
    let p = paper_lgssm();
    let y = data(&p, 20, 13);
    let exact = kalman::loglik(&p, &y).unwrap();
    let opts = FilterOptions::new(&p, 10_000);
    let ratios: Vec<f64> = (0..200)
        .map(|r| {
            let ll = run_filter(&p, &y, &ZeroStatistic(0), &opts, &mut derive(14, &[r])).unwrap().loglik;
            (ll - exact).exp()
        })
        .collect();
    let (m, sd) = mean_sd(&ratios);
    assert!((m - 1.0).abs() < 3.0 * sd / 200f64.sqrt(), "mean ratio {m}");
}

#[test]
fn score_mse_shrinks_with_particles() {
    let p = paper_lgssm();
    let y = data(&p, 20, 15);
    let exact = kalman::exact_score(&p, &y, &[1.0; 20]).unwrap().grad;
    let h = FisherStatistic::full(&p, 20);
    let mse = |n: usize| {
        let opts = FilterOptions {
            n_particles: n,
            proposal: ProposalKind::Prior,
            resampling: ResamplingKind::Multinomial,
        };
        (0..100)
            .map(|r| {
                let g = run_filter(&p, &y, &h, &opts, &mut derive(16, &[n as u64, r])).unwrap().h;
                g.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / 100.0
    };
    let ratio = mse(10_000) / mse(100);
    assert!(ratio < 0.05, "ratio {ratio}");
}

#[test]
fn heldout_agrees_with_kalman() {
    let p = paper_lgssm();
    let y = data(&p, 100, 17);
    let exact = kalman::loglik(&p, &y).unwrap();
    let opts = FilterOptions::new(&p, 10_000);
    let v: Vec<f64> = (0..100)
        .map(|r| heldout_loglik(&p, &y, &opts, PredictiveForm::Mixture, &mut derive(31, &[r])).unwrap())
        .collect();
    let (m, sd) = mean_sd(&v);
    assert!((m - exact).abs() < 3.0 * sd / 10.0, "{m} vs {exact}");
    // one-step-ahead is the r = 1 predictive
    let a = predictive_loglik(&p, &y, 1, &opts, PredictiveForm::Mixture, &mut master(19)).unwrap();
    let b = heldout_loglik(&p, &y, &opts, PredictiveForm::Mixture, &mut master(19)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn expected_log_form_is_a_lower_bound() {
    let p = paper_lgssm();
    let y = data(&p, 50, 20);
    let opts = FilterOptions::new(&p, 1000);
    let mix = heldout_loglik(&p, &y, &opts, PredictiveForm::Mixture, &mut master(21)).unwrap();
    let low = heldout_loglik(&p, &y, &opts, PredictiveForm::ExpectedLog, &mut master(21)).unwrap();
    assert!(low <= mix);
}

#[test]
fn memoryless_predictive_is_exact() {
    // φ = 0: every horizon's predictive is the marginal N(0, σ² + τ²).
    let p = lgssm(0.0, 0.8, 0.6);
    let y = data(&p, 40, 22);
    let opts = FilterOptions::new(&p, 50);
    for r in [1, 5] {
        let got = predictive_loglik(&p, &y, r, &opts, PredictiveForm::Mixture, &mut master(23)).unwrap();
        let want: f64 = y[r - 1..].iter().map(|v| normal_logpdf(*v, 0.0, 0.64 + 0.36)).sum();
        assert!((got - want).abs() < 1e-9 * want.abs(), "r={r}: {got} vs {want}");
    }
}

#[test]
fn predictive_boundaries() {
    let p = paper_lgssm();
    let opts = FilterOptions::new(&p, 10);
    let mut rng = master(24);
    assert_eq!(heldout_loglik(&p, &[], &opts, PredictiveForm::Mixture, &mut rng).unwrap(), 0.0);
    assert!(predictive_loglik(&p, &[0.1, 0.2], 0, &opts, PredictiveForm::Mixture, &mut rng).is_err());
    assert!(predictive_loglik(&p, &[0.1, 0.2], 3, &opts, PredictiveForm::Mixture, &mut rng).is_err());
}

#[test]
fn svm_heldout_is_finite_and_reproducible() {
    let p = ModelKind::Svm.reference_params();
    let y = data(&p, 100, 25);
    let opts = FilterOptions::new(&p, 500);
    let a = heldout_loglik(&p, &y, &opts, PredictiveForm::Mixture, &mut master(26)).unwrap();
    let b = heldout_loglik(&p, &y, &opts, PredictiveForm::Mixture, &mut master(26)).unwrap();
    assert!(a.is_finite());
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn invalid_options_and_degeneracy() {
    let p = paper_lgssm();
    let mut rng = master(27);
    let h = ZeroStatistic(0);
    let one = FilterOptions::new(&p, 1);
    assert!(run_filter(&p, &[0.0], &h, &one, &mut rng).is_err());
    assert!(run_filter(&p, &[], &h, &FilterOptions::new(&p, 10), &mut rng).is_err());
    let svm = ModelParams::Svm(Svm::new(0.9, 0.5, 0.5).unwrap());
    let opt = FilterOptions {
        n_particles: 10,
        proposal: ProposalKind::OptimalInstrumental,
        resampling: ResamplingKind::Multinomial,
    };
    assert!(matches!(run_filter(&svm, &[0.0], &h, &opt, &mut rng), Err(Error::Unsupported { .. })));
    let r = run_filter(&svm, &[0.1, 1e300], &h, &FilterOptions::new(&svm, 10), &mut rng);
    assert!(matches!(r, Err(Error::Degenerate { t: 2 })), "{r:?}");
}

#[test]
fn permuting_particles_does_not_change_the_step_law() {
    let p = paper_lgssm();
    let mut rng = master(28);
    let mut cloud = ParticleCloud::initialize(&p, 50, 3, &mut rng).unwrap();
    let h = FisherStatistic::full(&p, 3);
    let opts = FilterOptions::new(&p, 50);
    cloud = step(&cloud, &p, 0.7, 0, &h, &opts, &mut rng).unwrap();
    let mut permuted = cloud.clone();
    let perm: Vec<usize> = (0..50).rev().collect();
    permuted.particles = perm.iter().map(|&i| cloud.particles[i]).collect();
    permuted.log_weights = perm.iter().map(|&i| cloud.log_weights[i]).collect();
    permuted.stats = perm.iter().flat_map(|&i| cloud.stats_of(i).to_vec()).collect();
    let summary = |c: &ParticleCloud, seed: u64| -> Vec<f64> {
        (0..1000)
            .map(|r| {
                let next = step(c, &p, -0.3, 1, &h, &opts, &mut derive(seed, &[r])).unwrap();
                next.weighted_stats()[0]
            })
            .collect()
    };
    let (ma, sa) = mean_sd(&summary(&cloud, 29));
    let (mb, sb) = mean_sd(&summary(&permuted, 30));
    let se = (sa * sa / 1000.0 + sb * sb / 1000.0).sqrt();
    assert!((ma - mb).abs() < 4.0 * se, "{ma} vs {mb}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cloud_invariants_hold_after_every_step(seed in 0u64..1000, n in 2usize..64, kind in 0usize..3, model in 0usize..3) {
        let p = [ModelKind::Lgssm, ModelKind::Svm, ModelKind::Garch][model].reference_params();
        let y = data(&p, 8, seed);
        let opts = FilterOptions { n_particles: n, proposal: p.kind().default_proposal(), resampling: KINDS[kind] };
        let h = FisherStatistic::full(&p, 8);
        let mut rng = master(seed);
        let mut cloud = ParticleCloud::initialize(&p, n, p.dim(), &mut rng).unwrap();
        for (t, &yt) in y.iter().enumerate() {
            cloud = step(&cloud, &p, yt, t, &h, &opts, &mut rng).unwrap();
            prop_assert!(crate::math::logsumexp(&cloud.log_weights).abs() < 1e-10);
            prop_assert!(cloud.ancestors.iter().all(|&a| a < n));
            prop_assert_eq!(cloud.ancestors.len(), n);
            prop_assert_eq!(cloud.stats.len(), n * p.dim());
        }
    }
}

#[test]
fn heldout_likelihood_ratio_is_unbiased() {
    let p = paper_lgssm();
    let y = data(&p, 100, 17);
    let exact = kalman::loglik(&p, &y).unwrap();
    let opts = FilterOptions::new(&p, 500);
    let reps = 1000;
    let v: Vec<f64> = (0..reps)
        .map(|r| {
            let ll = heldout_loglik(&p, &y, &opts, PredictiveForm::Mixture, &mut derive(99, &[r])).unwrap();
            (ll - exact).exp()
        })
        .collect();
    let (m, sd) = mean_sd(&v);
    assert!((m - 1.0).abs() < 3.0 * sd / (reps as f64).sqrt(), "mean ratio {m}");
}
