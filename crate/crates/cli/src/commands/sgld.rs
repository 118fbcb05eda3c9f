use std::path::PathBuf;

use pfsgld::data::load_series;
use pfsgld::rng::derive;
use pfsgld::sgld::{run_chain, StepScaling, EPS_GRID};
use pfsgld::{Error, EstimatorConfig, EstimatorKind, Execution, ModelParams, Result, SgldConfig};

use super::evaluate::{eval_steps, evaluate_chain, write_eval};
use super::{create, required, with_suffix, Ctx};
use crate::config::{Particles, SgldArgs};
use crate::manifest::Recorder;

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_EPS: f64 = 0.1;

/// File name of chain `c` for one stepsize.
pub fn chain_file_name(kind: EstimatorKind, eps: f64, c: usize) -> String {
    format!("{}_eps{eps}_chain{c}.csv", kind.name())
}

pub fn run(ctx: &Ctx, flags: &SgldArgs) -> Result<()> {
    let mut rec = Recorder::start("sgld");
    let a = crate::config::layer(ctx.file.sgld.as_ref(), flags)?;
    let kind = ctx.model()?;
    let seed = ctx.seed();
    let data = required(a.data.clone(), "--data")?;
    let train = load_series(&data)?;
    rec.input(&data)?;
    let estimator = a.estimator.unwrap_or(EstimatorKind::Buffered);
    if estimator == EstimatorKind::Weekly && train.segments.len() < 2 {
        return Err(Error::Config(
            "the weekly estimator needs segmented input (a segment_key,value file from `pfsgld ingest`)".into(),
        ));
    }
    let mut est = EstimatorConfig::preset(estimator);
    if let Some(s) = a.subsequence {
        est.subsequence = s;
    }
    if let Some(b) = a.buffer {
        est.buffer = b;
    }
    if let Some(p) = a.particles {
        est.particles = p.0;
    }
    if let Some(s) = a.scheme {
        est.scheme = s;
    }
    est.proposal = Some(a.proposal.unwrap_or(kind.default_proposal()));
    if let Some(r) = a.resampling {
        est.resampling = r;
    }
    let eps_list = if a.eps_grid.unwrap_or(false) {
        EPS_GRID.to_vec()
    } else {
        a.eps.clone().unwrap_or_else(|| vec![DEFAULT_EPS])
    };
    if eps_list.is_empty() {
        return Err(Error::Config("no stepsize given".into()));
    }
    let iterations = a.iterations.unwrap_or(DEFAULT_ITERATIONS);
    let burnin = a.burnin.unwrap_or(iterations / 2);
    let thin = a.thin.unwrap_or(1);
    let n_chains = a.chains.unwrap_or(1);
    let eps_scaling = a.eps_scaling.unwrap_or(StepScaling::PerObservation);
    let max_degenerate = a.max_degenerate.unwrap_or(10);
    let out_dir = required(a.out_dir.clone(), "--out-dir")?;

    // Explicit parameters start every chain; otherwise draw from the prior.
    let fixed_init = if ctx.param_overrides().is_empty() {
        None
    } else {
        Some(ctx.params(kind)?)
    };
    let base = SgldConfig {
        eps: eps_list[0],
        eps_scaling,
        iterations,
        estimator: est,
        seed,
        burnin,
        thin,
        max_degenerate,
        inject_noise: true,
        clock: ctx.clock,
    };
    let jobs: Vec<(f64, usize)> = eps_list.iter().flat_map(|&e| (0..n_chains).map(move |c| (e, c))).collect();
    for &(eps, _) in &jobs {
        SgldConfig { eps, ..base }.validate()?;
    }
    let inits: Vec<ModelParams> = (0..n_chains)
        .map(|c| match fixed_init {
            Some(p) => Ok(p),
            None => ModelParams::sample_initial(kind, &mut derive(seed, &[c as u64, 0])),
        })
        .collect::<Result<_>>()?;

    log::info!("{} chains of {iterations} steps ({})", jobs.len(), estimator);
    let chains = Execution::Parallel.try_map(jobs.len(), |j| {
        let (eps, c) = jobs[j];
        let cfg = SgldConfig { eps, ..base };
        // Same stream for chain c under every stepsize and estimator.
        let mut rng = derive(seed, &[c as u64, 1]);
        run_chain(&inits[c], &train.segments, &cfg, &mut rng)
    })?;

    let evaluation = match &a.test {
        Some(p) => {
            let test = load_series(p)?;
            rec.input(p)?;
            Some(test)
        }
        None => None,
    };
    let horizons = a.horizons.clone().unwrap_or_else(|| vec![3]);
    let eval_every = a.eval_every.unwrap_or(iterations / 20).max(1);
    let eval_particles = a.eval_particles.unwrap_or(super::evaluate::DEFAULT_PARTICLES);

    let mut outputs: Vec<Vec<PathBuf>> = Vec::new();
    for (&(eps, c), chain) in jobs.iter().zip(&chains) {
        if chain.rejected_steps > 0 {
            log::warn!("eps {eps} chain {c}: {} steps kept the previous state", chain.rejected_steps);
        }
        let path = out_dir.join(chain_file_name(estimator, eps, c));
        chain.write_csv(create(&path)?)?;
        let mut files = vec![path.clone()];
        if let Some(test) = &evaluation {
            let steps = eval_steps(chain.len(), eval_every);
            let rows = evaluate_chain(chain, test, &steps, &horizons, eval_particles, seed)?;
            let eval_path = with_suffix(&path, "_eval");
            write_eval(create(&eval_path)?, &path.display().to_string(), &rows, &horizons, None)?;
            files.push(eval_path);
        }
        outputs.push(files);
    }

    let mut snap = ctx.snapshot(Some(kind), fixed_init.as_ref());
    snap.sgld = Some(SgldArgs {
        data: Some(data),
        estimator: Some(estimator),
        eps: Some(eps_list),
        eps_grid: None,
        eps_scaling: Some(eps_scaling),
        iterations: Some(iterations),
        burnin: Some(burnin),
        thin: Some(thin),
        subsequence: Some(est.subsequence),
        buffer: Some(est.buffer),
        particles: Some(Particles(est.particles)),
        scheme: Some(est.scheme),
        proposal: est.proposal,
        resampling: Some(est.resampling),
        chains: Some(n_chains),
        max_degenerate: Some(max_degenerate),
        test: a.test.clone(),
        eval_every: a.test.as_ref().map(|_| eval_every),
        horizons: a.test.as_ref().map(|_| horizons.clone()),
        eval_particles: a.test.as_ref().map(|_| eval_particles),
        out_dir: Some(out_dir),
    });
    for files in &outputs {
        rec.write_one(&snap, &files[0], files)?;
    }
    Ok(())
}
