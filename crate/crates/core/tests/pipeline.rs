//! Library-level pipelines: data in, gradients and chains out.

use pfsgld::data::{ingest_csv, read_series, write_trajectory};
use pfsgld::rng::{derive, master};
use pfsgld::sgld::{posterior_mean, run_chain};
use pfsgld::{EstimatorConfig, EstimatorKind, ModelKind, SgldConfig};

#[test]
fn simulated_trajectory_survives_csv() {
    let p = ModelKind::Svm.reference_params();
    let traj = p.simulate(50, &mut master(1)).unwrap();
    let mut buf = Vec::new();
    write_trajectory(&traj, &mut buf).unwrap();
    let series = read_series(buf.as_slice(), None).unwrap();
    assert_eq!(series.segments.len(), 1);
    assert_eq!(series.flatten(), traj.observations);
}

#[test]
fn exact_gradient_sgld_recovers_phi() {
    let truth = ModelKind::Lgssm.reference_params();
    let y = truth.simulate(500, &mut master(2)).unwrap().observations;
    let mut config = SgldConfig::preset(EstimatorKind::Buffered, 0.05, 3000, 3);
    config.estimator.particles = None;
    let start = ModelKind::Lgssm.reference_params();
    let chain = run_chain(&start, &[y], &config, &mut derive(3, &[0])).unwrap();
    assert_eq!(chain.len(), 3000);
    let mean = posterior_mean(&chain, 1500, 1).unwrap();
    assert!((mean[0] - 0.9).abs() < 0.1, "posterior mean of phi {}", mean[0]);
}

#[test]
fn weekly_gradients_on_ingested_prices() {
    let mut csv = String::from("timestamp,price\n");
    let mut price: f64 = 100.0;
    let mut rng = master(4);
    for day in 4..=29 {
        for hour in [9, 12, 15] {
            price *= 1.0 + 0.01 * (rand::Rng::random::<f64>(&mut rng) - 0.5);
            csv.push_str(&format!("2021-01-{day:02} {hour:02}:00,{price:.5}\n"));
        }
    }
    let series = ingest_csv(csv.as_bytes(), None).unwrap();
    assert_eq!(series.segments.len(), 4);
    let est = EstimatorConfig {
        particles: Some(200),
        ..EstimatorConfig::preset(EstimatorKind::Weekly)
    };
    let p = ModelKind::Svm.reference_params();
    let g = est.estimate(&p, &series.segments, &mut master(5)).unwrap();
    assert_eq!(g.grad.len(), 3);
    assert!(g.grad.iter().all(|v| v.is_finite()));
}
