use std::path::{Path, PathBuf};

use pfsgld::data::load_series;
use pfsgld::diagnostics::{ksd, ksd_report, score_estimates, write_ksd_report, KsdInput, KsdResult};
use pfsgld::{Chain, Error, EstimatorConfig, EstimatorKind, Execution, ModelKind, Result};

use super::evaluate::check_model;
use super::{create, required, Ctx};
use crate::config::{KsdArgs, Particles};
use crate::manifest::Recorder;

/// `METHOD=PATH`, or a bare path labelled by its stem up to `_eps`.
pub fn parse_chain_arg(s: &str) -> (String, PathBuf) {
    if let Some((label, path)) = s.split_once('=') {
        return (label.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(s);
    let stem = path.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
    let label = stem.split("_eps").next().unwrap_or(&stem).to_string();
    (label, path)
}

fn default_particles(kind: ModelKind) -> Particles {
    match kind {
        ModelKind::Lgssm => Particles(None),
        _ => Particles(Some(1000)),
    }
}

pub fn chain_ksd(
    chain: &Chain,
    segments: &[Vec<f64>],
    estimator: &EstimatorConfig,
    burnin: usize,
    thin: usize,
    seed: u64,
) -> Result<KsdResult> {
    let idx = chain.retained(burnin, thin)?;
    let scores = score_estimates(chain, &idx, segments, estimator, seed, Execution::Parallel)?;
    let samples = idx.iter().map(|&k| chain.samples[k].clone()).collect();
    ksd(&KsdInput { samples, scores }, Execution::Parallel)
}

pub fn run(ctx: &Ctx, flags: &KsdArgs) -> Result<()> {
    let mut rec = Recorder::start("ksd");
    let a = crate::config::layer(ctx.file.ksd.as_ref(), flags)?;
    let kind = ctx.model()?;
    let chain_args = required(a.chains.clone(), "--chain")?;
    if chain_args.is_empty() {
        return Err(Error::Config("no chain files given".into()));
    }
    let data = required(a.data.clone(), "--data")?;
    let train = load_series(&data)?;
    rec.input(&data)?;
    let estimator_kind = a.estimator.unwrap_or(EstimatorKind::Full);
    let particles = a.particles.unwrap_or(default_particles(kind));
    let mut estimator = EstimatorConfig::preset(estimator_kind);
    estimator.particles = particles.0;
    let thin = a.thin.unwrap_or(1);
    let out = required(a.out.clone(), "--out")?;

    let mut results = Vec::new();
    for arg in &chain_args {
        let (label, path) = parse_chain_arg(arg);
        check_model(Path::new(&path), kind)?;
        let chain = Chain::load(kind, &path)?;
        rec.input(&path)?;
        let burnin = a.burnin.unwrap_or(chain.len() / 2);
        log::info!("KSD of {} ({label})", path.display());
        results.push((label, chain_ksd(&chain, &train.segments, &estimator, burnin, thin, ctx.seed())?));
    }
    let rows = ksd_report(&results, kind.unconstrained_names());
    write_ksd_report(&rows, create(&out)?)?;

    let mut snap = ctx.snapshot(Some(kind), None);
    snap.ksd = Some(KsdArgs {
        chains: Some(chain_args),
        data: Some(data),
        estimator: Some(estimator_kind),
        particles: Some(particles),
        burnin: a.burnin,
        thin: Some(thin),
        out: Some(out.clone()),
    });
    rec.finish(&snap, &[out])
}
