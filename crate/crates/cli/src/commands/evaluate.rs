use std::io::Write;
use std::path::{Path, PathBuf};

use pfsgld::data::{load_series, SegmentedSeries};
use pfsgld::diagnostics::mse_to_truth;
use pfsgld::particle::{heldout_loglik, predictive_loglik, PredictiveForm};
use pfsgld::rng::derive;
use pfsgld::{Chain, Error, Execution, FilterOptions, ModelKind, Result};

use super::{create, required, Ctx};
use crate::config::EvaluateArgs;
use crate::manifest::{read_manifest, manifest_path, Recorder};

pub const DEFAULT_PARTICLES: usize = 1000;

/// Zero-based chain indices to evaluate: every `every`-th step and the last.
pub fn eval_steps(len: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut v: Vec<usize> = (1..=len).filter(|k| k % every == 0).map(|k| k - 1).collect();
    if len > 0 && v.last() != Some(&(len - 1)) {
        v.push(len - 1);
    }
    v
}

pub struct EvalRow {
    pub step: usize,
    pub wall_time: f64,
    pub heldout: f64,
    pub predictive: Vec<f64>,
}

/// Heldout and r-step predictive loglikelihood of `test` at chain states.
/// Step `k` uses the same random streams in every chain.
pub fn evaluate_chain(
    chain: &Chain,
    test: &SegmentedSeries,
    steps: &[usize],
    horizons: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    Execution::Parallel.try_map(steps.len(), |i| {
        let k = steps[i];
        let params = chain.params_at(k)?;
        let opts = FilterOptions::new(&params, n);
        let mut rng = derive(seed, &[k as u64, 0]);
        let mut heldout = 0.0;
        for seg in &test.segments {
            heldout += heldout_loglik(&params, seg, &opts, PredictiveForm::Mixture, &mut rng)?;
        }
        let mut predictive = Vec::with_capacity(horizons.len());
        for &r in horizons {
            let mut rng = derive(seed, &[k as u64, r as u64]);
            let mut total = 0.0;
            for seg in &test.segments {
                total += predictive_loglik(&params, seg, r, &opts, PredictiveForm::Mixture, &mut rng)?;
            }
            predictive.push(total);
        }
        Ok(EvalRow {
            step: k + 1,
            wall_time: chain.wall_time[k],
            heldout,
            predictive,
        })
    })
}

/// Parameter names and the per-step squared errors for the MSE columns.
pub type MseColumns<'a> = (&'a [&'a str], &'a dyn Fn(usize) -> Option<Vec<f64>>);

pub fn write_eval<W: Write>(
    w: W,
    label: &str,
    rows: &[EvalRow],
    horizons: &[usize],
    mse: Option<MseColumns<'_>>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["chain".to_string(), "step".into(), "wall_time_s".into(), "heldout_loglik".into()];
    header.extend(horizons.iter().map(|r| format!("pred{r}_loglik")));
    if let Some((names, _)) = &mse {
        header.extend(names.iter().map(|n| format!("mse_{n}")));
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![label.to_string(), r.step.to_string(), fmt(r.wall_time), fmt(r.heldout)];
        rec.extend(r.predictive.iter().map(|v| fmt(*v)));
        if let Some((names, f)) = &mse {
            match f(r.step - 1) {
                Some(v) => rec.extend(v.iter().map(|x| fmt(*x))),
                None => rec.extend(names.iter().map(|_| String::new())),
            }
        }
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<evaluation csv>", e))?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Model recorded in the manifest next to `path`, if there is one.
pub fn recorded_model(path: &Path) -> Result<Option<ModelKind>> {
    let m = manifest_path(path);
    if !m.exists() {
        return Ok(None);
    }
    Ok(read_manifest(&m)?.config.model)
}

pub fn check_model(path: &Path, kind: ModelKind) -> Result<()> {
    match recorded_model(path)? {
        Some(k) if k != kind => Err(Error::Domain(format!(
            "{} holds a {k} chain but the model is {kind}",
            path.display()
        ))),
        _ => Ok(()),
    }
}

pub fn run(ctx: &Ctx, flags: &EvaluateArgs) -> Result<()> {
    let mut rec = Recorder::start("evaluate");
    let a = crate::config::layer(ctx.file.evaluate.as_ref(), flags)?;
    let kind = ctx.model()?;
    let truth = ctx.params(kind)?;
    let chains: Vec<PathBuf> = required(a.chains.clone(), "--chain")?;
    if chains.is_empty() {
        return Err(Error::Config("no chain files given".into()));
    }
    let test_path = required(a.test.clone(), "--test")?;
    let test = load_series(&test_path)?;
    rec.input(&test_path)?;
    let horizons = a.horizons.clone().unwrap_or_else(|| vec![3]);
    if horizons.contains(&0) {
        return Err(Error::Config("predictive horizons must be at least 1".into()));
    }
    let n = a.particles.unwrap_or(DEFAULT_PARTICLES);
    let every = a.every.unwrap_or(1).max(1);
    let with_truth = a.truth.unwrap_or(false);
    let out = required(a.out.clone(), "--out")?;

    let mut buf = Vec::new();
    let names = kind.natural_names();
    for (ci, path) in chains.iter().enumerate() {
        check_model(path, kind)?;
        let chain = Chain::load(kind, path)?;
        rec.input(path)?;
        if chain.is_empty() {
            return Err(Error::data(None, format!("{} holds no samples", path.display())));
        }
        let burnin = a.burnin.unwrap_or(chain.len() / 2);
        let steps = eval_steps(chain.len(), every);
        let rows = evaluate_chain(&chain, &test, &steps, &horizons, n, ctx.seed())?;
        let mse = if with_truth {
            Some(mse_to_truth(&chain, &truth.natural(), burnin)?)
        } else {
            None
        };
        let lookup = |k: usize| mse.as_ref().and_then(|m| k.checked_sub(burnin).map(|i| m[i].clone()));
        let label = path.display().to_string();
        let mut part = Vec::new();
        let mse_arg: Option<MseColumns<'_>> =
            if with_truth { Some((names, &lookup)) } else { None };
        write_eval(&mut part, &label, &rows, &horizons, mse_arg)?;
        // keep a single header
        let text = String::from_utf8(part).expect("csv is utf-8");
        let body = if ci == 0 { text.as_str() } else { text.split_once('\n').map_or("", |x| x.1) };
        buf.extend_from_slice(body.as_bytes());
    }
    let mut w = create(&out)?;
    w.write_all(&buf).map_err(|e| Error::io(&out, e))?;
    w.flush().map_err(|e| Error::io(&out, e))?;

    let mut snap = ctx.snapshot(Some(kind), Some(&truth));
    snap.evaluate = Some(EvaluateArgs {
        chains: Some(chains),
        test: Some(test_path),
        horizons: Some(horizons),
        particles: Some(n),
        every: Some(every),
        burnin: a.burnin,
        truth: Some(with_truth),
        out: Some(out.clone()),
    });
    rec.finish(&snap, &[out])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_include_the_last() {
        assert_eq!(eval_steps(10, 4), vec![3, 7, 9]);
        assert_eq!(eval_steps(8, 4), vec![3, 7]);
        assert_eq!(eval_steps(3, 1), vec![0, 1, 2]);
        assert!(eval_steps(0, 5).is_empty());
    }
}
