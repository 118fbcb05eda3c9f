use pfsgld::data::write_trajectory;
use pfsgld::rng::master;
use pfsgld::{Error, Result};

use super::{create, required, Ctx};
use crate::config::GenerateArgs;
use crate::manifest::Recorder;

pub fn run(ctx: &Ctx, flags: &GenerateArgs) -> Result<()> {
    let rec = Recorder::start("generate");
    let a = crate::config::layer(ctx.file.generate.as_ref(), flags)?;
    let kind = ctx.model()?;
    let params = ctx.params(kind)?;
    let t_len = a.t_len.unwrap_or(256);
    if t_len == 0 {
        return Err(Error::Config("--t-len must be positive".into()));
    }
    let out = required(a.out, "--out")?;
    let traj = params.simulate(t_len, &mut master(ctx.seed()))?;
    write_trajectory(&traj, create(&out)?)?;
    log::info!("wrote {t_len} observations to {}", out.display());

    let mut snap = ctx.snapshot(Some(kind), Some(&params));
    snap.generate = Some(GenerateArgs {
        t_len: Some(t_len),
        out: Some(out.clone()),
    });
    rec.finish(&snap, &[out])
}
