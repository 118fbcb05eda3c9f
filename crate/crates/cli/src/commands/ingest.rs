use pfsgld::data::ingest_file;
use pfsgld::Result;

use super::{create, required, with_suffix, Ctx};
use crate::config::IngestArgs;
use crate::manifest::Recorder;

pub fn run(ctx: &Ctx, flags: &IngestArgs) -> Result<()> {
    let mut rec = Recorder::start("ingest");
    let a = crate::config::layer(ctx.file.ingest.as_ref(), flags)?;
    let input = required(a.input, "--input")?;
    let out = required(a.out, "--out")?;
    let series = ingest_file(&input)?;
    rec.input(&input)?;
    series.write_csv(create(&out)?)?;
    log::info!(
        "{} returns in {} segments (demeaned by {:?})",
        series.total_len(),
        series.segments.len(),
        series.provenance.demean_mean
    );
    let mut outputs = vec![out.clone()];
    let mut resolved = IngestArgs {
        input: Some(input),
        out: Some(out.clone()),
        ..Default::default()
    };
    if let Some(k) = a.train_segments {
        let (train, test) = series.split(k)?;
        let train_out = a.train_out.unwrap_or_else(|| with_suffix(&out, "_train"));
        let test_out = a.test_out.unwrap_or_else(|| with_suffix(&out, "_test"));
        train.write_csv(create(&train_out)?)?;
        test.write_csv(create(&test_out)?)?;
        outputs.push(train_out.clone());
        outputs.push(test_out.clone());
        resolved.train_segments = Some(k);
        resolved.train_out = Some(train_out);
        resolved.test_out = Some(test_out);
    }
    let mut snap = ctx.snapshot(None, None);
    snap.ingest = Some(resolved);
    rec.finish(&snap, &outputs)
}
