use pfsgld::data::load_series;
use pfsgld::diagnostics::{grad_bias_experiment, write_bias_csv, BiasCell, BiasPlan, ReferenceGradient};
use pfsgld::{Error, Execution, ModelParams, ResamplingKind, Result, SubsequenceScheme};

use super::{create, required, single_sequence, Ctx};
use crate::config::{BiasArgs, Particles};
use crate::manifest::Recorder;

pub const DEFAULT_REPS: usize = 200;

fn load_reference(path: &std::path::Path, params: &ModelParams, t_len: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let r: ReferenceGradient = serde_json::from_str(&text)?;
    let close = r
        .params
        .natural()
        .iter()
        .zip(params.natural())
        .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0));
    if r.params.kind() != params.kind() || !close || r.t_len != t_len {
        return Err(Error::Config(format!(
            "reference {} was computed for {:?} on T = {}, not {:?} on T = {t_len}",
            path.display(),
            r.params,
            r.t_len,
            params
        )));
    }
    Ok(r.grad)
}

pub fn run(ctx: &Ctx, flags: &BiasArgs) -> Result<()> {
    let mut rec = Recorder::start("grad-bias");
    let a = crate::config::layer(ctx.file.grad_bias.as_ref(), flags)?;
    let kind = ctx.model()?;
    let params = ctx.params(kind)?;
    let data = required(a.data.clone(), "--data")?;
    let y = single_sequence(&load_series(&data)?, &data)?;
    rec.input(&data)?;
    let s_list = a.s.clone().unwrap_or_else(|| vec![16]);
    let b_list = a.b.clone().unwrap_or_else(|| vec![0, 1, 2, 4, 8, 16]);
    let n_list = a.n.clone().unwrap_or_else(|| vec![Particles(Some(1000))]);
    let scheme = a.scheme.unwrap_or(SubsequenceScheme::UniformStart);
    let reps = a.reps.unwrap_or(DEFAULT_REPS);
    let resampling = a.resampling.unwrap_or(ResamplingKind::Multinomial);
    let proposal = a.proposal.unwrap_or(kind.default_proposal());
    let out = required(a.out.clone(), "--out")?;

    let mut cells = Vec::new();
    for &s in &s_list {
        for &b in &b_list {
            for n in &n_list {
                cells.push(BiasCell { s, b, n: n.0, scheme });
            }
        }
    }
    let rows = if cells.is_empty() {
        Vec::new()
    } else {
        let reference = match &a.reference {
            Some(p) => {
                rec.input(p)?;
                Some(load_reference(p, &params, y.len())?)
            }
            None => None,
        };
        let plan = BiasPlan {
            params,
            y,
            cells,
            n_reps: reps,
            seed: ctx.seed(),
            proposal: Some(proposal),
            resampling,
            clock: ctx.clock,
        };
        grad_bias_experiment(&plan, reference.as_deref(), Execution::Parallel)?
    };
    write_bias_csv(&rows, create(&out)?)?;

    let mut snap = ctx.snapshot(Some(kind), Some(&params));
    snap.grad_bias = Some(BiasArgs {
        data: Some(data),
        reference: a.reference,
        s: Some(s_list),
        b: Some(b_list),
        n: Some(n_list),
        scheme: Some(scheme),
        reps: Some(reps),
        proposal: Some(proposal),
        resampling: Some(resampling),
        out: Some(out.clone()),
    });
    rec.finish(&snap, &[out])
}
