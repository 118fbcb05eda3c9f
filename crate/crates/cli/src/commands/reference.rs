use std::io::Write;

use pfsgld::data::load_series;
use pfsgld::diagnostics::compute_reference;
use pfsgld::{Error, Execution, Result};

use super::{create, required, single_sequence, Ctx};
use crate::config::ReferenceArgs;
use crate::manifest::Recorder;

pub const DEFAULT_PARTICLES: usize = 100_000;
pub const DEFAULT_REPS: usize = 4;

pub fn run(ctx: &Ctx, flags: &ReferenceArgs) -> Result<()> {
    let mut rec = Recorder::start("make-reference");
    let a = crate::config::layer(ctx.file.reference.as_ref(), flags)?;
    let kind = ctx.model()?;
    let params = ctx.params(kind)?;
    let data = required(a.data, "--data")?;
    let y = single_sequence(&load_series(&data)?, &data)?;
    rec.input(&data)?;
    let n = a.particles.unwrap_or(DEFAULT_PARTICLES);
    let reps = a.reps.unwrap_or(DEFAULT_REPS);
    if n < 2 {
        return Err(Error::Config("--particles must be at least 2".into()));
    }
    let proposal = a.proposal.unwrap_or(kind.default_proposal());
    let out = required(a.out, "--out")?;
    log::info!("reference gradient: {kind}, T = {}, N = {n}, {reps} runs", y.len());
    let r = compute_reference(&params, &y, n, reps, ctx.seed(), Some(proposal), Execution::Parallel)?;
    let mut w = create(&out)?;
    serde_json::to_writer_pretty(&mut w, &r)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&out, e))?;

    let mut snap = ctx.snapshot(Some(kind), Some(&params));
    snap.reference = Some(ReferenceArgs {
        data: Some(data),
        particles: Some(n),
        reps: Some(reps),
        proposal: Some(proposal),
        out: Some(out.clone()),
    });
    rec.finish(&snap, &[out])
}
